import math
from itertools import permutations

import numpy as np
import pytest

from mtcov.metrics import (
    _cos_matrix,
    _l1_matrix,
    accuracy,
    auc,
    baselines,
    community_entropy,
    harden,
    matched_similarity,
    recovery_report,
    soft_scores,
    support_communities,
)


def test_matched_similarity_identical():
    p = [{0, 1, 2}, {3, 4}]
    assert matched_similarity(p, p, "f1") == 1.0
    assert matched_similarity(p, p, "jaccard") == 1.0


def test_matched_similarity_merged_set():
    truth = [{0, 1}, {2, 3}]
    merged = [{0, 1, 2, 3}]
    assert matched_similarity(truth, merged, "jaccard") == pytest.approx(0.5)


def test_matched_similarity_disjoint_universes():
    assert matched_similarity([{0, 1}], [{5, 6}], "f1") == 0.0


def test_matched_similarity_errors():
    with pytest.raises(ValueError):
        matched_similarity([], [{1}])
    with pytest.raises(ValueError):
        matched_similarity([{1}], [set()])
    with pytest.raises(ValueError):
        matched_similarity([{1}], [{1}], "nmi")


def test_matched_f1_hand_value():
    # F1({0,1,2},{0,1}) = 2*2/5
    truth = [{0, 1, 2}]
    det = [{0, 1}]
    assert matched_similarity(truth, det, "f1") == pytest.approx(0.8)


def test_harden_and_support():
    U = np.array([[0.6, 0.4], [0.5, 0.5], [0.0, 1.0]])
    assert harden(U) == [{0, 1}, {2}]
    assert support_communities(U) == [{0, 1}, {0, 1, 2}]
    assert support_communities(U, threshold=0.45) == [{0, 1}, {1, 2}]


def test_soft_scores_identity_and_permutation():
    rng = np.random.default_rng(0)
    U0 = np.eye(3)[rng.integers(0, 3, size=20)]
    s = soft_scores(U0, U0)
    assert s.cs == pytest.approx(1.0) and s.l1 == 0.0
    s = soft_scores(U0[:, [2, 0, 1]], U0)
    assert s.cs == pytest.approx(1.0) and s.l1 == 0.0


def test_soft_scores_disjoint_worst_case():
    U0 = np.array([[1.0, 0.0]] * 4)
    U = np.array([[0.0, 1.0]] * 4)
    # identity alignment read off the per-column score matrices
    G, _ = _cos_matrix(U, U0)
    D = _l1_matrix(U, U0)
    assert G[0, 0] + G[1, 1] == 0.0
    assert D[0, 0] + D[1, 1] == 1.0


def test_soft_scores_matches_brute_force():
    rng = np.random.default_rng(1)
    U = rng.dirichlet(np.ones(3), size=15)
    U0 = rng.dirichlet(np.ones(3), size=15)
    best_cs, best_l1 = -1, 9
    for p in permutations(range(3)):
        P = U[:, list(p)]
        cs = np.mean(np.sum(P * U0, axis=1) / (np.linalg.norm(P, axis=1) * np.linalg.norm(U0, axis=1)))
        l1 = np.abs(P - U0).sum() / (2 * len(U))
        best_cs, best_l1 = max(best_cs, cs), min(best_l1, l1)
    s = soft_scores(U, U0)
    assert s.cs == pytest.approx(best_cs, abs=1e-12)
    assert s.l1 == pytest.approx(best_l1, abs=1e-12)


def test_soft_scores_assignment_above_cap_matches_exhaustive(caplog):
    rng = np.random.default_rng(2)
    U = rng.dirichlet(np.ones(4), size=30)
    U0 = rng.dirichlet(np.ones(4), size=30)
    exact = soft_scores(U, U0, cap=8)
    solved = soft_scores(U, U0, cap=2)
    assert solved.cs == pytest.approx(exact.cs, abs=1e-12)
    assert solved.l1 == pytest.approx(exact.l1, abs=1e-12)
    assert "assignment solver" in caplog.text


def test_soft_scores_zero_rows_counted():
    U = np.array([[0.0, 0.0], [1.0, 0.0]])
    U0 = np.array([[1.0, 0.0], [1.0, 0.0]])
    s = soft_scores(U, U0)
    assert s.n_zero_rows == 1 and s.cs == pytest.approx(0.5)


def test_auc_fixtures():
    assert auc([1, 1, 1], [0, 0]) == 1.0
    assert auc([0.3, 0.3], [0.3, 0.3, 0.3]) == 0.5
    assert auc([0.9, 0.4], [0.5, 0.1]) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        auc([], [1])


def test_auc_matches_pair_count():
    rng = np.random.default_rng(3)
    pos = rng.integers(0, 5, size=40).astype(float)
    neg = rng.integers(0, 5, size=30).astype(float)
    pairs = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    assert auc(pos, neg) == pytest.approx(pairs / (40 * 30), abs=1e-14)


def test_accuracy():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([1, 2], [2, 1]) == 0.0
    assert accuracy([0, 1, 1, 0], [0, 1, 1, 1]) == 0.75
    with pytest.raises(ValueError):
        accuracy([1], [1, 2])


def test_baselines():
    assert baselines([0], 13).rp == pytest.approx(0.077, abs=5e-4)
    assert round(baselines([0], 13).rp, 2) == 0.08
    assert baselines([0, 1], 2).rp == 0.5
    b = baselines([2, 2, 2], 3, test_truth=[2, 0, 2, 1])
    assert b.mrf_category == 2 and b.mrf == 0.5
    assert baselines([], 3).mrf is None


def test_community_entropy_fixtures():
    attrs = np.array([0, 1, 2, 3, 0, 0, 0, 0, 0, 1])
    H = community_entropy([{0, 1, 2, 3}, {4, 5, 6}, {0, 9}], attrs, 4)
    assert H[0] == pytest.approx(1.0)
    assert H[1] == 0.0
    assert H[2] == pytest.approx(math.log(2) / math.log(4))
    with pytest.raises(ValueError):
        community_entropy([{0}], attrs, 1)


def test_recovery_report_perfect():
    U0 = np.eye(2)[[0, 0, 1, 1, 1]]
    rep = recovery_report(U0[:, ::-1], U0[:, ::-1], U0)
    assert rep.f1 == rep.jaccard == 1.0
    assert rep.cs == pytest.approx(1.0) and rep.l1 == 0.0
    assert set(rep.per_matrix) == {"U", "V"}
    assert '"f1": 1.0' in rep.to_json()
