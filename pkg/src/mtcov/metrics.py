"""Evaluation measures for recovered communities and held-out predictions."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from itertools import permutations
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

logger = logging.getLogger(__name__)

PERMUTATION_CAP = 8


def harden(U: np.ndarray) -> list[set[int]]:
    """Argmax communities (lowest index on ties); empty groups are dropped."""
    U = np.asarray(U)
    labels = np.argmax(U, axis=1)
    return [set(np.flatnonzero(labels == k).tolist()) for k in range(U.shape[1]) if np.any(labels == k)]


def support_communities(U: np.ndarray, threshold: float = 0.0) -> list[set[int]]:
    """Group k holds every node with ``U[i, k] > threshold`` (overlapping)."""
    U = np.asarray(U)
    return [set(np.flatnonzero(U[:, k] > threshold).tolist()) for k in range(U.shape[1])]


def _f1(a: set, b: set) -> float:
    inter = len(a & b)
    return 0.0 if inter == 0 else 2.0 * inter / (len(a) + len(b))


def _jaccard(a: set, b: set) -> float:
    union = len(a | b)
    return 0.0 if union == 0 else len(a & b) / union


_DELTAS = {"f1": _f1, "jaccard": _jaccard}


def matched_similarity(truth: Sequence[set], detected: Sequence[set], delta: str = "f1") -> float:
    """Symmetric best-match similarity between two sets of communities.

    Half the mean over ground-truth groups of their best match among the
    detected ones, plus half the mean the other way round.
    """
    try:
        fn = _DELTAS[delta.lower()]
    except KeyError:
        raise ValueError(f"delta must be one of {sorted(_DELTAS)}") from None
    truth = [set(c) for c in truth]
    detected = [set(c) for c in detected]
    if not truth or not detected or any(not c for c in truth) or any(not c for c in detected):
        raise ValueError("both partitions need at least one nonempty community")
    S = np.array([[fn(t, d) for d in detected] for t in truth])
    return 0.5 * S.max(axis=1).mean() + 0.5 * S.max(axis=0).mean()


@dataclass
class SoftScores:
    cs: float
    l1: float
    cs_permutation: tuple[int, ...]
    l1_permutation: tuple[int, ...]
    n_zero_rows: int = 0


def _cos_matrix(U, U0):
    nu = np.linalg.norm(U, axis=1)
    n0 = np.linalg.norm(U0, axis=1)
    ok = (nu > 0) & (n0 > 0)
    Un = np.zeros_like(U, dtype=float)
    U0n = np.zeros_like(U0, dtype=float)
    Un[ok] = U[ok] / nu[ok, None]
    U0n[ok] = U0[ok] / n0[ok, None]
    # G[a, b]: mean contribution of detected column a aligned with true column b
    return Un.T @ U0n / U.shape[0], int((~ok).sum())


def _l1_matrix(U, U0):
    N = U.shape[0]
    return np.abs(U[:, :, None] - U0[:, None, :]).sum(axis=0) / (2.0 * N)


def soft_scores(U: np.ndarray, U0: np.ndarray, cap: int = PERMUTATION_CAP) -> SoftScores:
    """Cosine similarity and L1 distance under the best column permutation.

    Both scores are sums over columns once a permutation is fixed, so CS is
    maximised and L1 minimised independently. Up to ``cap`` columns all
    permutations are tried; above that an assignment solver finds the same
    optimum. Zero rows add nothing to CS and are counted.
    """
    U = np.asarray(U, dtype=float)
    U0 = np.asarray(U0, dtype=float)
    if U.shape != U0.shape:
        raise ValueError("U and U0 must have the same shape")
    C = U.shape[1]
    G, n_zero = _cos_matrix(U, U0)
    D = _l1_matrix(U, U0)
    if C <= cap:
        best_cs, best_l1 = (-np.inf, None), (np.inf, None)
        cols = np.arange(C)
        for p in permutations(range(C)):
            p = np.array(p)
            cs = G[p, cols].sum()
            l1 = D[p, cols].sum()
            if cs > best_cs[0] + 1e-15:
                best_cs = (cs, tuple(p.tolist()))
            if l1 < best_l1[0] - 1e-15:
                best_l1 = (l1, tuple(p.tolist()))
    else:
        logger.warning("C=%d above permutation cap %d; using assignment solver", C, cap)
        r, c = linear_sum_assignment(-G)
        p_cs = np.empty(C, int)
        p_cs[c] = r
        r, c = linear_sum_assignment(D)
        p_l1 = np.empty(C, int)
        p_l1[c] = r
        best_cs = (G[p_cs, np.arange(C)].sum(), tuple(p_cs.tolist()))
        best_l1 = (D[p_l1, np.arange(C)].sum(), tuple(p_l1.tolist()))
    return SoftScores(float(best_cs[0]), float(best_l1[0]), best_cs[1], best_l1[1], n_zero)


def auc(scores_pos, scores_neg) -> float:
    """Probability that a positive outscores a negative, ties counting one half."""
    pos = np.asarray(scores_pos, dtype=float).ravel()
    neg = np.asarray(scores_neg, dtype=float).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def accuracy(predicted, truth) -> float:
    p = np.asarray(predicted)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError("predicted and truth lengths differ")
    if p.size == 0:
        raise ValueError("accuracy of an empty prediction")
    return float(np.mean(p == t))


@dataclass
class Baselines:
    rp: float
    mrf: float | None
    mrf_category: int | None


def baselines(train_truth, n_categories: int, test_truth=None) -> Baselines:
    """Uniform random guess (1/Z) and the modal training category predictor.

    ``mrf`` is the accuracy of always predicting the modal training category
    on ``test_truth`` (or on the training labels when no test set is given).
    """
    if n_categories < 1:
        raise ValueError("n_categories must be >= 1")
    rp = 1.0 / n_categories
    train = np.asarray(train_truth, dtype=np.int64)
    if train.size == 0:
        return Baselines(rp, None, None)
    mode = int(np.argmax(np.bincount(train, minlength=n_categories)))
    target = train if test_truth is None else np.asarray(test_truth, dtype=np.int64)
    mrf = float(np.mean(target == mode)) if target.size else None
    return Baselines(rp, mrf, mode)


def community_entropy(partition: Sequence[set], attributes, n_categories: int) -> np.ndarray:
    """Attribute entropy inside each community, normalised by ``log Z``."""
    if n_categories < 2:
        raise ValueError("entropy normalisation needs at least two categories")
    attr = np.asarray(attributes, dtype=np.int64)
    out = []
    for comm in partition:
        idx = np.fromiter(comm, dtype=np.int64)
        if idx.size == 0:
            raise ValueError("empty community")
        f = np.bincount(attr[idx], minlength=n_categories) / idx.size
        f = f[f > 0]
        out.append(float(-(f * np.log(f)).sum() / np.log(n_categories)))
    return np.array(out)


@dataclass
class MetricReport:
    f1: float | None = None
    jaccard: float | None = None
    cs: float | None = None
    l1: float | None = None
    auc: float | None = None
    accuracy: float | None = None
    permutation_used: list[int] | None = None
    per_matrix: dict = field(default_factory=dict)
    entropy: list[float] | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def recovery_scores(U: np.ndarray, U0: np.ndarray) -> dict:
    """F1, Jaccard, CS and L1 of one membership matrix against the truth."""
    truth = harden(U0)
    det = harden(U)
    soft = soft_scores(U, U0)
    return {
        "f1": matched_similarity(truth, det, "f1"),
        "jaccard": matched_similarity(truth, det, "jaccard"),
        "cs": soft.cs,
        "l1": soft.l1,
        "permutation": list(soft.cs_permutation),
    }


def recovery_report(U: np.ndarray, V: np.ndarray, U0: np.ndarray, V0: np.ndarray | None = None) -> MetricReport:
    """Scores for U and V separately and their mean as the headline numbers."""
    V0 = U0 if V0 is None else V0
    su = recovery_scores(U, U0)
    sv = recovery_scores(V, V0)
    mean = {k: 0.5 * (su[k] + sv[k]) for k in ("f1", "jaccard", "cs", "l1")}
    return MetricReport(
        f1=mean["f1"],
        jaccard=mean["jaccard"],
        cs=mean["cs"],
        l1=mean["l1"],
        permutation_used=su["permutation"],
        per_matrix={"U": su, "V": sv},
    )
