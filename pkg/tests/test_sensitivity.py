import math

import numpy as np
import pytest

from netsens import dense
from netsens.graph import florentine_families
from netsens.maxelem import TopPConfig
from netsens.sensitivity import (
    Measure,
    UnsupportedSizeError,
    all_edge_sensitivities,
    edge_sensitivity,
    estrada_index,
    finite_difference_check,
    mask_pairs,
    node_removal_sensitivity,
    subgraph_centrality,
    top_p_edges,
    total_communicability,
)

from oracles import complete, empty, graph, path, random_digraph, random_undirected, taylor_frechet

E = math.e


def _label_pairs(g, report):
    return [(g.labels[e.i], g.labels[e.j]) for e in report.entries]


def test_measure_parsing():
    assert Measure.parse("TN") == Measure("tn")
    assert Measure.parse("sc", 3).focus == 3
    assert Measure.parse("ee", 3).focus is None
    with pytest.raises(ValueError):
        Measure("sc")
    with pytest.raises(ValueError):
        Measure("katz")


def test_communicability_closed_forms():
    assert total_communicability(empty(4)) == pytest.approx(4, rel=1e-12)
    assert total_communicability(path(2), tol=1e-12) == pytest.approx(2 * E, rel=1e-10)
    assert subgraph_centrality(empty(3), 1) == pytest.approx(1)
    for v in range(2):
        assert subgraph_centrality(path(2), v, tol=1e-12) == pytest.approx(math.cosh(1), rel=1e-10)
    k3 = (E**2 + 2 / E) / 3
    for v in range(3):
        assert subgraph_centrality(complete(3), v, tol=1e-12) == pytest.approx(k3, abs=1e-8)


def test_estrada_index_closed_forms():
    assert estrada_index(empty(5)) == pytest.approx(5)
    assert estrada_index(path(2)) == pytest.approx(2 * math.cosh(1), rel=1e-13)
    assert estrada_index(complete(3)) == pytest.approx(E**2 + 2 / E, rel=1e-13)
    rng = np.random.default_rng(0)
    g = random_digraph(12, 0.3, rng)
    assert estrada_index(g) == pytest.approx(np.trace(dense.expm(g.A.toarray())), rel=1e-12)


def test_estrada_index_size_cap():
    with pytest.raises(UnsupportedSizeError, match="subgraph_centrality"):
        estrada_index(empty(6), cap=5)


def test_edge_sensitivity_on_empty_graph():
    g = empty(4)
    for i, j in [(0, 1), (2, 3), (3, 0)]:
        assert edge_sensitivity(g, "tn", i, j) == pytest.approx(1, rel=1e-12)
        assert edge_sensitivity(g, "ee", i, j) == 0
    with pytest.raises(ValueError):
        edge_sensitivity(g, "tn", 1, 1)
    with pytest.raises(IndexError):
        edge_sensitivity(g, "tn", 0, 4)


def test_edge_sensitivity_matches_dense_oracle():
    rng = np.random.default_rng(1)
    for directed in (False, True):
        for trial in range(4):
            n = int(rng.integers(5, 30))
            g = random_digraph(n, 0.2, rng, weighted=True) if directed else random_undirected(n, 0.2, rng, weighted=True)
            A = g.A.toarray()
            u = int(rng.integers(n))
            i, j = rng.choice(n, 2, replace=False)
            L = dense.block_frechet_oracle(A, dense.edge_direction(n, i, j))
            assert edge_sensitivity(g, "tn", i, j, tol=1e-10) == pytest.approx(L.sum(), rel=1e-8)
            assert edge_sensitivity(g, Measure("sc", u), i, j, tol=1e-10) == pytest.approx(L[u, u], rel=1e-7, abs=1e-12)
            assert edge_sensitivity(g, "ee", i, j, tol=1e-10) == pytest.approx(np.trace(L), rel=1e-8)


def test_doubled_convention_is_exactly_twice_rank_one():
    g = florentine_families()
    for measure in ("tn", "ee"):
        one = edge_sensitivity(g, measure, 8, 14)
        two = edge_sensitivity(g, measure, 8, 14, convention="doubled")
        assert two == 2 * one
        a = all_edge_sensitivities(g, measure, mask="virtual")
        b = all_edge_sensitivities(g, measure, mask="virtual", convention="doubled")
        assert a.pairs() == b.pairs()
        np.testing.assert_array_equal(b.values(), 2 * a.values())
    gd = random_digraph(10, 0.3, np.random.default_rng(2))
    assert edge_sensitivity(gd, "tn", 0, 1, convention="doubled") == edge_sensitivity(gd, "tn", 0, 1)
    with pytest.raises(ValueError):
        edge_sensitivity(g, "tn", 0, 1, convention="halved")


def test_ee_sensitivity_is_symmetric_on_undirected_graphs():
    rng = np.random.default_rng(3)
    g = random_undirected(40, 0.1, rng, weighted=True)
    for _ in range(10):
        i, j = rng.choice(40, 2, replace=False)
        assert edge_sensitivity(g, "ee", i, j) == edge_sensitivity(g, "ee", j, i)


def test_mask_pairs():
    g = path(3)
    assert [tuple(x) for x in np.column_stack(mask_pairs(g, "existing"))] == [(0, 1), (1, 2)]
    assert [tuple(x) for x in np.column_stack(mask_pairs(g, "virtual"))] == [(0, 2)]
    assert len(mask_pairs(g, "all")[0]) == 3
    gd = random_digraph(6, 0.5, np.random.default_rng(4))
    rows, cols = mask_pairs(gd, "virtual")
    assert len(rows) + gd.nnz == 30
    rows, cols = mask_pairs(g, np.array([[2, 0]]))
    assert (rows[0], cols[0]) == (2, 0)
    with pytest.raises(ValueError):
        mask_pairs(g, "nothing")


def test_all_edge_sensitivities_path_symmetry():
    rep = all_edge_sensitivities(path(3), "tn", tol=1e-10)
    a, b = rep.values()
    assert a == pytest.approx(b, rel=1e-10)
    assert rep.ok and rep.krylov_dim >= 1


def test_all_edge_sensitivities_match_dense_oracle():
    rng = np.random.default_rng(5)
    for trial in range(3):
        n = int(rng.integers(10, 60))
        g = random_digraph(n, 0.1, rng) if trial % 2 else random_undirected(n, 0.1, rng)
        A = g.A.toarray()
        S = taylor_frechet(A.T, np.ones((n, n)))
        F = dense.expm(A.T)
        for measure, ref in (("tn", S), ("ee", F)):
            rep = all_edge_sensitivities(g, measure, mask="virtual", tol=1e-8)
            for e in rep.entries:
                assert e.value == pytest.approx(ref[e.i, e.j], rel=1e-6, abs=1e-12 * np.abs(ref).max())
            vals = rep.values()
            assert np.all(np.diff(vals) <= 0)


def test_florentine_tables():
    g = florentine_families()
    tn = top_p_edges(g, "tn", p=5, virtual=True)
    assert _label_pairs(g, tn) == [
        ("Medici", "Strozzi"),
        ("Guadagni", "Medici"),
        ("Bischeri", "Medici"),
        ("Medici", "Peruzzi"),
        ("Castellani", "Medici"),
    ]
    np.testing.assert_allclose(tn.values(), [42.22, 39.40, 36.20, 35.33, 34.26], atol=0.01)
    ee = top_p_edges(g, "ee", p=5, virtual=True)
    assert [frozenset(x) for x in _label_pairs(g, ee)] == [
        frozenset(x)
        for x in [
            ("Medici", "Guadagni"),
            ("Bischeri", "Castellani"),
            ("Tornabuoni", "Albizzi"),
            ("Medici", "Strozzi"),
            ("Guadagni", "Ridolfi"),
        ]
    ]
    np.testing.assert_allclose(ee.values(), [2.73, 2.46, 2.36, 2.10, 2.02], atol=0.01)
    assert edge_sensitivity(g, "ee", 8, 6) == pytest.approx(2.73, abs=0.01)


def test_top_p_single_matches_exhaustive_argmax():
    rng = np.random.default_rng(6)
    for trial in range(12):
        n = int(rng.integers(8, 60))
        g = random_digraph(n, 0.15, rng) if trial % 2 else random_undirected(n, 0.15, rng)
        if g.nnz == 0:
            continue
        measure = ["tn", Measure("sc", int(rng.integers(n))), "ee"][trial % 3]
        best = all_edge_sensitivities(g, measure, tol=1e-8).entries[0]
        got = top_p_edges(g, measure, p=1, tol=1e-8).entries[0]
        assert got.value == pytest.approx(best.value, rel=1e-6)


def test_top_p_over_all_admissible_pairs_overlaps_exhaustive():
    overlaps = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(6, 40))
        g = random_undirected(n, 0.2, rng)
        exact = all_edge_sensitivities(g, "tn", mask="virtual", tol=1e-8)
        p = len(exact.entries)
        if p == 0:
            continue
        rep = top_p_edges(g, "tn", p=p, virtual=True, tol=1e-8, cfg=TopPConfig(p=p, seed=seed))
        truth = {(e.i, e.j): e.value for e in exact.entries}
        got = {(e.i, e.j): e.value for e in rep.entries}
        overlaps.append(len(truth.keys() & got.keys()) / p)
        for key in truth.keys() & got.keys():
            assert got[key] == pytest.approx(truth[key], rel=1e-6)
    assert np.mean(overlaps) >= 0.9


def test_top_p_on_complete_graph_virtual_is_empty():
    rep = top_p_edges(complete(5), "tn", p=3, virtual=True)
    assert rep.entries == []
    assert "no-admissible-pairs" in rep.statuses


def test_top_p_directed_ee_uses_columnwise_path():
    g = random_digraph(15, 0.2, np.random.default_rng(7))
    rep = top_p_edges(g, "ee", p=3, tol=1e-10)
    assert "ee-columnwise" in rep.statuses
    F = dense.expm(g.A.toarray().T)
    rows, cols, _ = g.edges()
    best = np.sort(F[rows, cols])[::-1][:3]
    np.testing.assert_allclose(rep.values(), best, rtol=1e-6)


def test_node_removal_closed_forms():
    assert node_removal_sensitivity(path(2), "tn", 0, tol=1e-12) == pytest.approx(-2 * E, rel=1e-10)
    g = graph(np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]]))
    for measure in ("tn", "ee", Measure("sc", 0)):
        assert node_removal_sensitivity(g, measure, 2) == 0.0


def test_node_removal_matches_dense_oracle():
    rng = np.random.default_rng(8)
    for trial in range(6):
        n = int(rng.integers(5, 40))
        g = random_digraph(n, 0.2, rng, weighted=True) if trial % 2 else random_undirected(n, 0.2, rng, weighted=True)
        A = g.A.toarray()
        v = int(np.argmax(A.sum(axis=0) + A.sum(axis=1)))
        Ev = dense.node_direction(A, v)
        L = dense.block_frechet_oracle(A, Ev)
        u = int(rng.integers(n))
        assert node_removal_sensitivity(g, "tn", v, tol=1e-10) == pytest.approx(L.sum(), rel=1e-8)
        assert node_removal_sensitivity(g, "ee", v, tol=1e-10) == pytest.approx(np.trace(L), rel=1e-8)
        sc = node_removal_sensitivity(g, Measure("sc", u), v, tol=1e-10)
        assert sc == pytest.approx(L[u, u], rel=1e-7, abs=1e-10 * abs(L).max())


def test_finite_difference_examples():
    a, b = finite_difference_check(empty(3), "tn", 0, 1)
    assert a == pytest.approx(1, rel=1e-12)
    assert b == pytest.approx(1, abs=1e-9)
    a, b = finite_difference_check(path(2), "ee", 0, 1)
    assert a == pytest.approx(math.sinh(1), rel=1e-9)
    assert b == pytest.approx(math.sinh(1), rel=1e-8)
    g = florentine_families()
    a, b = finite_difference_check(g, "tn", 8, 14)
    assert abs(a - b) <= 1e-5 * abs(a)
    with pytest.raises(ValueError):
        finite_difference_check(g, "tn", 8, 14, h=0)
    with pytest.raises(UnsupportedSizeError):
        finite_difference_check(g, "tn", 8, 14, cap=10)
