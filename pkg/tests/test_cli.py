import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from netsens import dense
from netsens.cli import EXIT_ERROR, EXIT_ESTIMATOR, EXIT_NOT_CONVERGED, EXIT_OK, Outcome, main, render, run_bench
from netsens.graph import florentine_families, load_graph, to_matrix_market
from netsens.sensitivity import top_p_edges

from oracles import empty, graph, path, random_undirected, taylor_frechet


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def write_graph(tmp_path):
    def write(g, name="g.mtx"):
        path_ = tmp_path / name
        path_.write_text(to_matrix_market(g))
        return path_

    return write


def test_top_edges_florentine(capsys):
    code, out, _ = run(capsys, "top-edges", "florentine", "--measure", "tn", "--virtual", "--p", 5)
    assert code == EXIT_OK
    table = rows(out)
    assert [(r["label_i"], r["label_j"]) for r in table][:1] == [("Medici", "Strozzi")]
    assert float(table[0]["sensitivity"]) == pytest.approx(42.22, abs=0.01)
    assert {r["convention"] for r in table} == {"rank-one"}
    code, out, _ = run(capsys, "top-edges", "florentine", "--virtual", "--p", 5, "--convention", "doubled")
    assert float(rows(out)[0]["sensitivity"]) == pytest.approx(2 * 42.2226, abs=0.01)


def test_top_edges_is_byte_identical_across_runs(capsys):
    argv = ("top-edges", "florentine", "--virtual", "--p", 5, "--seed", 3, "--output", "json")
    first = run(capsys, *argv)[1]
    second = run(capsys, *argv)[1]
    assert first == second


def test_json_and_csv_carry_identical_values(capsys):
    argv = ("top-edges", "florentine", "--measure", "ee", "--virtual", "--p", 4)
    table = rows(run(capsys, *argv)[1])
    doc = json.loads(run(capsys, *argv, "--output", "json")[1])
    assert doc["schema_version"] == 1 and doc["command"] == "top-edges"
    assert len(doc["rows"]) == len(table)
    for a, b in zip(table, doc["rows"]):
        assert float(a["sensitivity"]) == b["sensitivity"]
        assert int(a["i"]) == b["i"] and a["label_j"] == b["label_j"]


def test_top_edges_on_empty_graph(capsys, write_graph):
    code, out, _ = run(capsys, "top-edges", write_graph(empty(4)), "--p", 1, "--virtual")
    assert code == EXIT_OK
    (row,) = rows(out)
    assert float(row["sensitivity"]) == pytest.approx(1, rel=1e-12)


def test_top_edges_subgraph_centrality_needs_focus(capsys):
    code, _, err = run(capsys, "top-edges", "florentine", "--measure", "sc")
    assert code == EXIT_ERROR and "--focus" in err
    code, out, _ = run(capsys, "top-edges", "florentine", "--measure", "sc", "--focus", "Medici", "--p", 2)
    assert code == EXIT_OK and rows(out)[0]["measure"] == "sc@Medici"


def test_top_edges_exhaustive_matches_estimate(capsys):
    a = rows(run(capsys, "top-edges", "florentine", "--virtual", "--p", 5)[1])
    b = rows(run(capsys, "top-edges", "florentine", "--virtual", "--p", 5, "--exhaustive")[1])
    assert [(r["i"], r["j"]) for r in a] == [(r["i"], r["j"]) for r in b]


def test_exit_codes(capsys, tmp_path):
    assert run(capsys, "top-edges", tmp_path / "missing.mtx")[0] == EXIT_ERROR
    bad = tmp_path / "bad.mtx"
    bad.write_text("not a matrix\n")
    assert run(capsys, "top-edges", bad)[0] == EXIT_ERROR
    with pytest.raises(SystemExit) as exc:
        main(["top-edges"])
    assert exc.value.code == 2
    capsys.readouterr()
    code, _, err = run(capsys, "top-edges", "florentine", "--m-max", 2, "--tol", 1e-12)
    assert code == EXIT_NOT_CONVERGED
    assert run(capsys, "top-edges", "florentine", "--threads", 0)[0] == EXIT_ERROR


def test_estimator_warning_exit_code():
    out = Outcome("x", ["a"])
    out.estimator_warning = True
    assert out.exit_code == EXIT_ESTIMATOR
    out.not_converged = True
    assert out.exit_code == EXIT_NOT_CONVERGED


def test_render_special_values():
    out = Outcome("x", ["a", "b"])
    out.add(math.inf, 0.1)
    assert json.loads(render(out, "json"))["rows"] == [{"a": "inf", "b": 0.1}]
    assert render(out, "csv") == "a,b\ninf,0.1\n"
    with pytest.raises(AssertionError):
        out.add(1)


def test_node_sens_rows(capsys, write_graph):
    A = np.zeros((4, 4))
    A[0, 1] = A[1, 0] = A[1, 2] = A[2, 1] = 1
    code, out, _ = run(capsys, "node-sens", write_graph(graph(A)), "--tol", 1e-10)
    assert code == EXIT_OK
    table = rows(out)
    assert float(table[3]["S_tn"]) == 0 and float(table[3]["S_ee"]) == 0
    assert float(table[0]["S_tn"]) == pytest.approx(float(table[2]["S_tn"]), rel=1e-10)
    p2 = rows(run(capsys, "node-sens", write_graph(path(2), "p2.mtx"), "--tol", 1e-10)[1])
    assert float(p2[0]["S_tn"]) == pytest.approx(float(p2[1]["S_tn"]), rel=1e-10)
    assert float(p2[0]["S_tn"]) == pytest.approx(-2 * math.e, rel=1e-9)


def test_node_sens_matches_dense_oracle(capsys, write_graph):
    g = random_undirected(30, 0.15, np.random.default_rng(0), weighted=True)
    table = rows(run(capsys, "node-sens", write_graph(g), "--focus", 4, "--tol", 1e-10)[1])
    A = g.A.toarray()
    for v in (0, 7, 19):
        L = dense.block_frechet_oracle(A, dense.node_direction(A, v))
        row = table[v]
        assert float(row["S_tn"]) == pytest.approx(L.sum(), rel=1e-6)
        assert float(row["S_ee"]) == pytest.approx(np.trace(L), rel=1e-6)
        assert float(row["S_sc@4"]) == pytest.approx(L[3, 3], rel=1e-6, abs=1e-12)
    one = rows(run(capsys, "node-sens", write_graph(g), "--node", 8, "--tol", 1e-10)[1])
    assert one == [{k: v for k, v in table[7].items() if k != "S_sc@4"}]


def test_bounds_dominate_node_sensitivities(capsys, write_graph):
    from netsens.graph import radius_for_degree, random_geometric_graph

    g = random_geometric_graph(100, radius_for_degree(100, 8), seed=3)
    A = g.A.toarray()
    v = int(np.argmax(A.sum(axis=0)))
    path_ = write_graph(g)
    code, out, _ = run(capsys, "bounds", path_, "--remove-node", v + 1)
    assert code == EXIT_OK
    table = rows(out)
    L = np.abs(taylor_frechet(A, -dense.node_direction(A, v)))
    for u, row in enumerate(table):
        assert L[u, u] <= float(row["bound"])
    assert table[v]["regime"] == "inapplicable"
    values = sorted({float(r["bound"]) for r in table if r["regime"] != "inapplicable"})
    assert len(values) < len(table) // 2  # one value per distance: a staircase


def test_bounds_edge_and_disconnected(capsys, write_graph):
    A = np.zeros((5, 5))
    A[0, 1] = A[1, 0] = A[1, 2] = A[2, 1] = A[3, 4] = A[4, 3] = 1
    path_ = write_graph(graph(A))
    table = rows(run(capsys, "bounds", path_, "--remove-node", 1)[1])
    assert float(table[3]["bound"]) == 0 and float(table[4]["bound"]) == 0
    code, out, _ = run(capsys, "bounds", path_, "--edge", 1, 2, "--output", "json")
    doc = json.loads(out)
    assert code == EXIT_OK and doc["meta"]["provenance"] == "exact-dense"
    assert run(capsys, "bounds", path_)[0] == EXIT_ERROR
    code, out, _ = run(capsys, "bounds", path_, "--remove-node", 2, "--lambda-min", -3.24, "--lambda-max", 3.79)
    assert rows(out)[0]["regime"] == "inapplicable"


def test_bench_small(capsys):
    code, out, _ = run(capsys, "bench", "--sizes", 200, 400, "--output", "json")
    doc = json.loads(out)
    assert code == EXIT_OK
    assert [r["n"] for r in doc["rows"]] == [200, 400]
    for r in doc["rows"]:
        assert 1 <= r["estimator_iters"] <= 10
        assert 8 <= r["avg_degree"] <= 12
    a = run_bench([300], seed=1)
    b = run_bench([300], seed=1)
    assert [x[:4] for x in a] == [x[:4] for x in b]


def test_gen_round_trip(capsys, tmp_path):
    code, out, _ = run(capsys, "gen", "rgg", "--n", 50, "--seed", 2)
    assert code == EXIT_OK
    (tmp_path / "r.mtx").write_text(out)
    g = load_graph(tmp_path / "r.mtx")
    assert g.n == 50 and not g.directed
    code, out, _ = run(capsys, "gen", "florentine", "--to", "edges")
    (tmp_path / "f.edges").write_text(out)
    f = load_graph(tmp_path / "f.edges", fmt="edgelist")
    assert (f.A != florentine_families().A).nnz == 0
    assert run(capsys, "gen", "rgg")[0] == EXIT_ERROR


def test_apply_update_against_dense(capsys, tmp_path):
    g = florentine_families()
    top = top_p_edges(g, "tn", p=5, virtual=True)
    add = " ".join(f"{e.i + 1},{e.j + 1}" for e in top.entries)
    code, out, _ = run(capsys, "apply-update", "florentine", "--add", add)
    assert code == EXIT_OK
    (row,) = rows(out)
    h = g.with_edges(np.array(top.pairs()), np.ones(5))
    before = dense.expm(g.A.toarray()).sum()
    after = dense.expm(h.A.toarray()).sum()
    assert float(row["C_tn_before"]) == pytest.approx(before, rel=1e-10)
    assert float(row["C_tn_after"]) == pytest.approx(after, rel=1e-10)
    assert float(row["percent_increase"]) == pytest.approx(100 * (after - before) / before, rel=1e-8)
    assert float(row["percent_increase"]) > 0
    edges = tmp_path / "add.edges"
    edges.write_text("\n".join(f"{e.i + 1} {e.j + 1}" for e in top.entries) + "\n")
    (row2,) = rows(run(capsys, "apply-update", "florentine", "--edges-file", edges, "--dense")[1])
    assert float(row2["C_tn_after"]) == pytest.approx(after, rel=1e-12)


def test_apply_update_empty_and_inverse(capsys, write_graph):
    (row,) = rows(run(capsys, "apply-update", "florentine")[1])
    assert float(row["percent_increase"]) == 0
    g = florentine_families()
    h = g.with_edges(np.array([[8, 14]]), [1.0])
    (row,) = rows(run(capsys, "apply-update", write_graph(h), "--add", "9,15,-1")[1])
    before = dense.expm(g.A.toarray()).sum()
    assert float(row["C_tn_after"]) == pytest.approx(before, rel=1e-10)
    assert run(capsys, "apply-update", "florentine", "--add", "3,3")[0] == EXIT_ERROR
    assert run(capsys, "apply-update", "florentine", "--add", "1;2;3")[0] == EXIT_ERROR


def test_communicability(capsys):
    code, out, _ = run(capsys, "communicability", "florentine", "--focus", "Medici", "--tol", 1e-10)
    table = rows(out)
    F = dense.expm(florentine_families().A.toarray())
    assert float(table[0]["value"]) == pytest.approx(F.sum(), rel=1e-9)
    assert float(table[1]["value"]) == pytest.approx(np.trace(F), rel=1e-12)
    assert table[2]["node"] == "Medici"
    assert float(table[2]["value"]) == pytest.approx(F[8, 8], rel=1e-9)
    assert len(rows(run(capsys, "communicability", "florentine", "--all-nodes")[1])) == 17


def test_zero_based_ids(capsys):
    a = rows(run(capsys, "top-edges", "florentine", "--virtual", "--p", 1)[1])[0]
    b = rows(run(capsys, "top-edges", "florentine", "--virtual", "--p", 1, "--zero-based")[1])[0]
    assert int(a["i"]) == int(b["i"]) + 1


def test_module_entry_point():
    res = subprocess.run(
        [sys.executable, "-m", "netsens", "top-edges", "florentine", "--p", "1", "--virtual"],
        capture_output=True, text=True, check=False,
    )
    assert res.returncode == 0
    assert "Medici" in res.stdout
