import math

import numpy as np
import pytest

from mtcov.data import (
    DataError,
    DesignMatrix,
    HoldoutMask,
    MultilayerGraph,
    bin_numeric,
    combine_designs,
    design_from_values,
    load_attributes,
    load_edgelist,
    load_mask,
    save_mask,
    validate,
    write_attributes,
    write_edgelist,
)
from mtcov.synth import generate, preset


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_minimal_edgelist(tmp_path):
    g = load_edgelist(write(tmp_path, "e.txt", "a b 0\nb a 0\na b 1\n"))
    assert (g.n_nodes, g.n_layers, g.n_entries, g.total_weight) == (2, 2, 3, 3)
    assert g.node_labels == ("a", "b")


def test_self_loops_dropped_and_counted(tmp_path):
    g = load_edgelist(write(tmp_path, "e.txt", "a a 0\na b 0\n"))
    assert g.n_self_loops_dropped == 1
    assert g.n_entries == 1


def test_duplicates_summed_and_weights_parsed(tmp_path):
    g = load_edgelist(write(tmp_path, "e.txt", "# comment\na b 0 2\na b 0\n\nb c 0 3  # trailing\n"))
    assert g.n_entries == 2
    assert sorted(g.weight.tolist()) == [3, 3]


def test_malformed_row_reports_line_number(tmp_path):
    with pytest.raises(DataError, match=":2:"):
        load_edgelist(write(tmp_path, "e.txt", "a b 0\na b\n"))
    with pytest.raises(DataError, match=":1:"):
        load_edgelist(write(tmp_path, "e.txt", "a b x\n"))


def test_negative_weight_rejected(tmp_path):
    with pytest.raises(DataError, match="negative weight"):
        load_edgelist(write(tmp_path, "e.txt", "a b 0 -1\n"))


def test_undirected_input_expands_to_both_arcs(tmp_path):
    g = load_edgelist(write(tmp_path, "e.txt", "a b 0\nc c 0\n"), directed=False)
    assert g.n_entries == 2 and g.n_self_loops_dropped == 1
    assert set(zip(g.src.tolist(), g.dst.tolist())) == {(0, 1), (1, 0)}


def test_village_sized_summary(tmp_path):
    # 441 nodes, 6 layers and 5578 edges in total
    rng = np.random.default_rng(0)
    rows, seen = [], set()
    while len(rows) < 5578:
        i, j, a = (int(x) for x in (rng.integers(441), rng.integers(441), rng.integers(6)))
        if i != j and (i, j, a) not in seen:
            seen.add((i, j, a))
            rows.append(f"n{i} n{j} {a}")
    path = write(tmp_path, "village.txt", "\n".join(rows) + "\n")
    g = load_edgelist(path, n_layers=6)
    s = g.summary()
    assert s["n_layers"] == 6 and s["total_weight"] == 5578
    assert s["n_nodes"] == len({r.split()[0] for r in rows} | {r.split()[1] for r in rows})
    assert sum(s["layer_totals"]) == 5578


def test_degree_caches_match_recomputation():
    g, _, _ = generate(preset("G3", 100, seed=2))
    A = g.dense()
    np.testing.assert_array_equal(g.out_degree, A.sum(axis=2).T)
    np.testing.assert_array_equal(g.in_degree, A.sum(axis=1).T)


def test_graph_invariants_enforced():
    with pytest.raises(DataError):
        MultilayerGraph(2, 1, [0], [0], [0], [1], ("a", "b"))
    with pytest.raises(DataError):
        MultilayerGraph(2, 1, [0], [5], [0], [1], ("a", "b"))
    with pytest.raises(DataError):
        MultilayerGraph(2, 1, [0], [1], [0], [0], ("a", "b"))


def test_edgelist_round_trip(tmp_path):
    g, _, _ = generate(preset("G1", 60, seed=3))
    write_edgelist(g, tmp_path / "e.txt")
    back = load_edgelist(tmp_path / "e.txt", n_layers=g.n_layers)
    orig = {(g.node_labels[i], g.node_labels[j], a, w) for i, j, a, w in zip(g.src, g.dst, g.layer, g.weight)}
    new = {(back.node_labels[i], back.node_labels[j], a, w) for i, j, a, w in zip(back.src, back.dst, back.layer, back.weight)}
    assert orig == new


def test_load_attributes_binary(tmp_path):
    p = write(tmp_path, "x.csv", "node,gender\n1,M\n2,F\n3,F\n4,M\n")
    d = load_attributes(p, "gender")
    assert d.n_categories == 2 and d.category_labels == ("F", "M")
    np.testing.assert_array_equal(d.onehot(), [[0, 1], [1, 0], [1, 0], [0, 1]])
    assert (d.onehot().sum(axis=1) == 1).all()


def test_load_attributes_thirteen_categories(tmp_path):
    castes = [f"caste{c:02d}" for c in range(13)]
    lines = ["node,caste"] + [f"{i},{castes[i % 13]}" for i in range(60)]
    d = load_attributes(write(tmp_path, "x.csv", "\n".join(lines)), "caste")
    assert d.n_categories == 13


def test_load_attributes_cross_product(tmp_path):
    lines = ["node,a,b"] + [f"{i},{'xy'[i % 2]},{'pqr'[i % 3]}" for i in range(6)]
    d = load_attributes(write(tmp_path, "x.csv", "\n".join(lines)), ["a", "b"])
    assert d.n_categories == 6


def test_load_attributes_errors(tmp_path):
    g = load_edgelist(write(tmp_path, "e.txt", "1 2 0\n3 4 0\n"))
    with pytest.raises(DataError, match="missing attribute value"):
        load_attributes(write(tmp_path, "x.csv", "node,g\n1,M\n2,\n3,F\n4,F\n"), "g", g)
    with pytest.raises(DataError, match="unknown node"):
        load_attributes(write(tmp_path, "x.csv", "node,g\n1,M\n2,F\n3,F\n4,F\n9,F\n"), "g", g)
    with pytest.raises(DataError, match="without an attribute row"):
        load_attributes(write(tmp_path, "x.csv", "node,g\n1,M\n2,F\n3,F\n"), "g", g)
    with pytest.raises(DataError, match="no column"):
        load_attributes(write(tmp_path, "x.csv", "node,g\n1,M\n"), "h")


def test_attributes_follow_graph_order(tmp_path):
    g = load_edgelist(write(tmp_path, "e.txt", "b a 0\n"))
    d = load_attributes(write(tmp_path, "x.csv", "node,g\na,X\nb,Y\n"), "g", g)
    assert [d.category_labels[z] for z in d.assignment] == ["Y", "X"]


def test_write_attributes_round_trip(tmp_path):
    d = design_from_values(["u", "v", "u"])
    write_attributes(d, ["a", "b", "c"], tmp_path / "x.csv", "col")
    back = load_attributes(tmp_path / "x.csv", "col")
    np.testing.assert_array_equal(back.assignment, d.assignment)


def test_combine_designs_only_observed_pairs():
    a = design_from_values(["x", "y", "x"])
    b = design_from_values(["p", "p", "q"])
    c = combine_designs(a, b)
    assert c.category_labels == ("x/p", "x/q", "y/p")


def test_bin_numeric_hand_example():
    d = bin_numeric([20, 24, 25, 31], 5)
    assert d.n_categories == 3
    assert d.assignment.tolist() == [0, 0, 1, 2]
    assert d.category_labels == ("[20,25)", "[25,30)", "[30,35)")


def test_bin_numeric_constant_and_span():
    assert bin_numeric([7, 7, 7], 5).n_categories == 1
    ages = list(range(18, 73))  # 55 years wide
    assert bin_numeric(ages, 5).n_categories == 11


def test_bin_numeric_drops_empty_bins():
    d = bin_numeric([0, 1, 20], 5)
    assert d.n_categories == 2 and d.assignment.tolist() == [0, 0, 1]


def test_bin_numeric_errors():
    with pytest.raises(DataError):
        bin_numeric([1.0, float("nan")], 5)
    with pytest.raises(DataError):
        bin_numeric([1.0], 0)


def test_validate_star_graph():
    g = MultilayerGraph.from_edges([0, 0, 0], [1, 2, 3], [0, 0, 0], n_nodes=4)
    rep = validate(g)
    assert rep.zero_out_degree.tolist() == [1, 2, 3]
    assert rep.zero_in_degree.tolist() == [0]


def test_validate_empty_graph_flags_everything():
    g = MultilayerGraph.from_edges([], [], [], n_nodes=5, n_layers=1)
    rep = validate(g)
    assert rep.zero_out_degree.tolist() == list(range(5))


def test_validate_zero_out_degree_rate_on_benchmark():
    # per layer, out-degrees are Poisson with mean close to 4.4
    N = 1000
    g, _, _ = generate(preset("G1", N, seed=5))
    b = 4 * 2 / N
    rate = (N / 2 - 1) * b + (N / 2) * 0.1 * b
    p = math.exp(-rate)
    for a in range(g.n_layers):
        count = int((g.out_degree[:, a] == 0).sum())
        assert abs(count - N * p) <= 3 * math.sqrt(N * p * (1 - p)) + 1
    # the report counts nodes with no out-edge in any layer
    p_all = math.exp(-2 * rate)
    assert len(validate(g).zero_out_degree) <= N * p_all + 3 * math.sqrt(N * p_all) + 1


def test_design_matrix_rows_sum_to_one():
    d = DesignMatrix(np.array([2, 0, 1, 1]), ("a", "b", "c"))
    assert (d.onehot().sum(axis=1) == 1).all()
    with pytest.raises(DataError):
        DesignMatrix(np.array([3]), ("a",))


def test_mask_round_trip_and_checks(tmp_path):
    m = HoldoutMask.from_keys(np.array([5, 1, 5, 17]), 3, [2, 0], seed=4, kind="uniform")
    assert m.n_triples == 3
    save_mask(m, tmp_path / "m.json")
    back = load_mask(tmp_path / "m.json")
    np.testing.assert_array_equal(back.triples, m.triples)
    np.testing.assert_array_equal(back.attribute_nodes, [0, 2])
    assert back.seed == 4 and back.kind == "uniform"
    np.testing.assert_array_equal(np.sort(back.keys(3)), [1, 5, 17])
    with pytest.raises(DataError):
        m.check(3, 1)
