"""Command-line interface.

Every command writes a table to stdout as CSV (default) or JSON and
diagnostics to stderr. Exit codes:

0  success
1  input, configuration or I/O error
2  command-line usage error (from argparse)
3  a Krylov iteration did not reach the requested tolerance
4  the top-p estimator reported a warning
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
import warnings
from contextlib import contextmanager, nullcontext

import numpy as np

from . import bounds as bd
from . import dense
from .graph import (
    Graph,
    GraphFormatError,
    florentine_families,
    load_edge_list,
    load_graph,
    radius_for_degree,
    random_geometric_graph,
    to_edge_list,
    to_matrix_market,
    weighted_degree,
)
from .krylov import KrylovConvergenceWarning, expm_action
from .maxelem import EstimatorWarning, TopPConfig
from . import sensitivity as sens

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_ESTIMATOR = 4
BENCH_SIZES = (200, 400, 800, 1600, 3200, 6400, 12800)

log = logging.getLogger("netsens")


class CommandError(Exception):
    """A user-facing failure; the message is printed without a traceback."""


class Outcome:
    """Collects the table and status flags produced by one command."""

    def __init__(self, command, columns):
        self.command = command
        self.columns = list(columns)
        self.rows = []
        self.meta = {}
        self.not_converged = False
        self.estimator_warning = False

    def add(self, *values):
        if len(values) != len(self.columns):
            raise AssertionError("row width does not match the header")
        self.rows.append(list(values))

    @property
    def exit_code(self):
        if self.not_converged:
            return EXIT_NOT_CONVERGED
        if self.estimator_warning:
            return EXIT_ESTIMATOR
        return EXIT_OK


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return None
        return v
    return v


def _csv_value(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def render(outcome: Outcome, fmt: str) -> str:
    """Serialize a table; CSV and JSON carry identical values."""
    if fmt == "json":
        doc = {
            "schema_version": SCHEMA_VERSION,
            "command": outcome.command,
            "columns": outcome.columns,
            "rows": [dict(zip(outcome.columns, map(_json_value, r))) for r in outcome.rows],
            "meta": {k: _json_value(v) for k, v in outcome.meta.items()},
        }
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(outcome.columns)
    for row in outcome.rows:
        writer.writerow([_csv_value(v) for v in row])
    return buf.getvalue()


@contextmanager
def _track(outcome: Outcome):
    """Record convergence and estimator warnings instead of printing them."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        yield
    for w in caught:
        if issubclass(w.category, KrylovConvergenceWarning):
            outcome.not_converged = True
        elif issubclass(w.category, EstimatorWarning):
            outcome.estimator_warning = True
        log.warning("%s", w.message)


def _threads(n):
    if n is None or n < 1:
        raise CommandError("--threads must be a positive integer")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        return nullcontext()
    return threadpool_limits(limits=n)


def _read_graph(args) -> Graph:
    if args.input == "florentine":
        return florentine_families()
    try:
        return load_graph(
            args.input,
            fmt=args.format,
            directed=args.directed,
            one_based=not args.zero_based,
            labels=args.labels,
        )
    except FileNotFoundError as exc:
        raise CommandError(f"cannot read {exc.filename}") from exc
    except GraphFormatError as exc:
        raise CommandError(f"{args.input}: {exc}") from exc


def _node(g: Graph, value, name):
    """Resolve a node given as 1-based id (or 0-based with --zero-based) or label."""
    if value is None:
        return None
    try:
        idx = int(value)
    except ValueError:
        labels = g.labels or []
        if value not in labels:
            raise CommandError(f"unknown {name} label {value!r}") from None
        return labels.index(value)
    return idx if _node.zero_based else idx - 1


_node.zero_based = False


def _display(idx):
    return idx if _node.zero_based else idx + 1


def _label(g: Graph, v):
    return g.label(v) if g.labels else str(_display(v))


def _measure(args, g):
    focus = _node(g, getattr(args, "focus", None), "focus")
    if args.measure == "sc" and focus is None:
        raise CommandError("--measure sc requires --focus")
    if focus is not None and not 0 <= focus < g.n:
        raise CommandError(f"focus node out of range for n={g.n}")
    return sens.Measure.parse(args.measure, focus)


def cmd_top_edges(args) -> Outcome:
    g = _read_graph(args)
    measure = _measure(args, g)
    out = Outcome(
        "top-edges", ["rank", "i", "j", "label_i", "label_j", "sensitivity", "measure", "convention"]
    )
    cfg = TopPConfig(p=args.p, alpha=args.alpha, max_iters=args.max_iters, seed=args.seed)
    with _track(out):
        t0 = time.perf_counter()
        if args.exhaustive:
            report = sens.all_edge_sensitivities(
                g, measure, mask="virtual" if args.virtual else "existing",
                tol=args.tol, m_max=args.m_max, convention=args.convention,
            )
            report.entries = report.entries[: args.p]
        else:
            report = sens.top_p_edges(
                g, measure, p=args.p, virtual=args.virtual, tol=args.tol, cfg=cfg,
                m_max=args.m_max, convention=args.convention,
            )
        elapsed = time.perf_counter() - t0
    if "estimator-warning" in report.statuses:
        out.estimator_warning = True
    if "krylov-not-converged" in report.statuses:
        out.not_converged = True
    name = f"sc@{_label(g, measure.focus)}" if measure.kind == "sc" else measure.kind
    for rank, e in enumerate(report.entries, 1):
        out.add(rank, _display(e.i), _display(e.j), _label(g, e.i), _label(g, e.j), e.value,
                name, report.convention)
    out.meta.update(
        n=g.n, edges=g.nnz if g.directed else g.nnz // 2, krylov_iterations=report.krylov_dim,
        estimator_iterations=report.estimator_iterations, statuses=";".join(report.statuses),
    )
    # timings vary between runs, so they stay out of the table
    log.info("compute time %.3f s", elapsed)
    for s in report.statuses:
        log.info("status: %s", s)
    return out


def cmd_node_sens(args) -> Outcome:
    g = _read_graph(args)
    focus = _node(g, args.focus, "focus")
    cols = ["node", "label", "S_tn", "S_ee"] + ([f"S_sc@{_label(g, focus)}"] if focus is not None else [])
    out = Outcome("node-sens", cols)
    nodes = range(g.n) if args.node is None else [_node(g, args.node, "node")]
    with _track(out):
        tn = sens.frechet_factor(g, "tn", tol=args.tol, m_max=args.m_max)
        sc = sens.frechet_factor(g, sens.Measure("sc", focus), tol=args.tol, m_max=args.m_max) if focus is not None else None
        for v in nodes:
            if not 0 <= v < g.n:
                raise CommandError(f"node out of range for n={g.n}")
            row = [
                _display(v),
                _label(g, v),
                sens.node_removal_sensitivity(g, "tn", v, factor=tn),
                sens.node_removal_sensitivity(g, "ee", v, tol=args.tol, m_max=args.m_max),
            ]
            if sc is not None:
                row.append(sens.node_removal_sensitivity(g, sens.Measure("sc", focus), v, factor=sc))
            out.add(*row)
    out.meta.update(n=g.n, krylov_iterations=tn.iterations)
    return out


def _context(args, g: Graph) -> bd.BoundContext:
    if args.lambda_min is not None or args.lambda_max is not None:
        if g.directed or args.lambda_min is None or args.lambda_max is None:
            raise CommandError("--lambda-min/--lambda-max must be given together for undirected graphs")
        return bd.BoundContext.interval(args.lambda_min, args.lambda_max, "user")
    if g.directed:
        return bd.fov_disk(g, "refined" if args.spectrum == "refined" else "norm-bound")
    method = {"refined": "lanczos"}.get(args.spectrum, args.spectrum)
    return bd.spectrum_interval(g, method)


def cmd_bounds(args) -> Outcome:
    g = _read_graph(args)
    if (args.remove_node is None) == (args.edge is None):
        raise CommandError("give exactly one of --remove-node or --edge")
    ctx = _context(args, g)
    out = Outcome("bounds", ["node", "label", "m", "regime", "bound"])
    out.meta.update(
        provenance=ctx.provenance, lambda_min=ctx.lambda_min, lambda_max=ctx.lambda_max, r=ctx.r, c=ctx.c
    )
    if args.remove_node is not None:
        v = _node(g, args.remove_node, "node")
        if not 0 <= v < g.n:
            raise CommandError(f"node out of range for n={g.n}")
        if g.directed:
            M = bd.node_bound_matrix(g, v, ctx)
            d_in, d_out = bd.distances_to(g, v), bd.geodesic_distances(g, v)
            results = [bd.BoundResult(M[u, u], "disk", d_in[u] + d_out[u] + 1) for u in range(g.n)]
        else:
            results = bd.sensitivity_bound_map(g, v, ctx)
        out.meta.update(removed=_display(v), degree=weighted_degree(g, v))
    else:
        i, j = (_node(g, x, "edge endpoint") for x in args.edge)
        M = bd.edge_bound_matrix(g, i, j, ctx)
        d_ui, d_ju = bd.distances_to(g, i), bd.geodesic_distances(g, j)
        regime = "disk" if g.directed else None
        results = []
        for u in range(g.n):
            m = d_ui[u] + d_ju[u]
            res = bd.edge_bound_undirected(ctx, m) if regime is None else bd.BoundResult(M[u, u], regime, m)
            results.append(res)
        out.meta.update(edge=f"{_display(i)}-{_display(j)}")
    for u, res in enumerate(results):
        m = res.m if math.isinf(res.m) else int(res.m)
        out.add(_display(u), _label(g, u), m, res.regime if res.applicable else "inapplicable", res.value)
    return out


def run_bench(sizes, degree=10.0, seed=0, p=10, tol=1e-3, alpha=3, repeats=1):
    """Top-p virtual TN edges on random geometric graphs of growing size.

    Returns rows ``(n, avg_degree, krylov_iters, estimator_iters, seconds)``.
    The timer covers the sensitivity computation only; graph generation is
    excluded. With ``repeats > 1`` the fastest run is reported.
    """
    rows = []
    for k, n in enumerate(sizes):
        g = random_geometric_graph(n, radius_for_degree(n, degree), seed=seed + k)
        cfg = TopPConfig(p=p, alpha=alpha, seed=seed)
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            report = sens.top_p_edges(g, "tn", p=p, virtual=True, tol=tol, cfg=cfg)
            best = min(best, time.perf_counter() - t0)
        rows.append((n, g.nnz / n, report.krylov_dim, report.estimator_iterations, best, report.statuses))
    return rows


def cmd_bench(args) -> Outcome:
    out = Outcome("bench", ["n", "avg_degree", "krylov_iters", "estimator_iters", "wall_time"])
    with _track(out):
        rows = run_bench(args.sizes, args.degree, args.seed, args.p, args.tol, args.alpha, args.repeats)
    for n, deg, kit, eit, t, statuses in rows:
        out.add(n, round(deg, 2), kit, eit, t)
        if "estimator-warning" in statuses:
            out.estimator_warning = True
    return out


def cmd_gen(args) -> Outcome | str:
    if args.kind == "florentine":
        g = florentine_families()
    else:
        if args.n is None:
            raise CommandError("gen rgg needs --n")
        radius = args.radius if args.radius is not None else radius_for_degree(args.n, args.degree)
        g = random_geometric_graph(args.n, radius, seed=args.seed)
    text = to_matrix_market(g) if args.to == "mtx" else to_edge_list(g)
    return text


def _parse_update(text: str, g: Graph, zero_based: bool):
    """Parse ``i,j[,w]`` items separated by whitespace or semicolons."""
    rows, cols, weights = [], [], []
    for item in text.replace(";", " ").split():
        parts = item.split(",")
        if len(parts) not in (2, 3):
            raise CommandError(f"bad update item {item!r}; expected i,j or i,j,w")
        i, j = (_node(g, x, "update endpoint") for x in parts[:2])
        rows.append(i)
        cols.append(j)
        weights.append(float(parts[2]) if len(parts) == 3 else 1.0)
    return rows, cols, weights


def cmd_apply_update(args) -> Outcome:
    g = _read_graph(args)
    if args.edges_file:
        try:
            with open(args.edges_file) as fh:
                upd = load_edge_list(fh.read(), directed=g.directed, one_based=not args.zero_based, n=g.n)
        except FileNotFoundError as exc:
            raise CommandError(f"cannot read {exc.filename}") from exc
        rows, cols, weights = upd.edges()
        if not g.directed:
            keep = rows < cols
            rows, cols, weights = rows[keep], cols[keep], weights[keep]
    else:
        rows, cols, weights = _parse_update(args.add or "", g, args.zero_based)
    pairs = np.column_stack([np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)])
    try:
        h = g.with_edges(pairs, weights) if len(pairs) else g
    except (ValueError, IndexError) as exc:
        raise CommandError(str(exc)) from exc
    out = Outcome("apply-update", ["C_tn_before", "C_tn_after", "percent_increase", "method"])
    with _track(out):
        if args.dense:
            if g.n > dense.DENSE_CAP:
                raise CommandError(f"--dense is limited to n <= {dense.DENSE_CAP}")
            before = float(dense.expm(g.A.toarray()).sum())
            after = float(dense.expm(h.A.toarray()).sum())
        else:
            before = float(expm_action(g, np.ones(g.n), tol=args.tol).sum())
            after = float(expm_action(h, np.ones(h.n), tol=args.tol).sum())
    out.add(before, after, 100.0 * (after - before) / before if before else 0.0, "dense" if args.dense else "krylov")
    out.meta.update(n=g.n, added=len(pairs))
    return out


def cmd_communicability(args) -> Outcome:
    g = _read_graph(args)
    out = Outcome("communicability", ["quantity", "node", "value"])
    with _track(out):
        out.add("total_communicability", "", sens.total_communicability(g, tol=args.tol, m_max=args.m_max))
        if g.n <= sens.ESTRADA_DENSE_CAP:
            out.add("estrada_index", "", sens.estrada_index(g))
        else:
            log.info("estrada index skipped: n=%d exceeds the dense cap", g.n)
        nodes = []
        if args.focus is not None:
            nodes = [_node(g, args.focus, "focus")]
        elif args.all_nodes:
            nodes = range(g.n)
        for v in nodes:
            out.add("subgraph_centrality", _label(g, v), sens.subgraph_centrality(g, v, tol=args.tol, m_max=args.m_max))
    return out


def _add_input(p):
    p.add_argument("input", help="graph file (MatrixMarket or edge list), or 'florentine' for the bundled fixture")
    p.add_argument("--format", choices=["mtx", "edgelist"], default=None, help="input format (default: by extension)")
    p.add_argument("--directed", action="store_true", help="treat an edge list as directed")
    p.add_argument("--zero-based", action="store_true", help="node ids in files and flags start at 0")
    p.add_argument("--labels", default=None, help="file with one node name per line")


def _add_numeric(p):
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--m-max", type=int, default=100)


def _add_output(p):
    p.add_argument("--output", choices=["csv", "json"], default="csv")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netsens", description="Sensitivity analysis of network communicability")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("top-edges", help="edges whose weight change affects the measure most")
    _add_input(p)
    _add_numeric(p)
    _add_output(p)
    p.add_argument("--measure", choices=["tn", "sc", "ee"], default="tn")
    p.add_argument("--focus", default=None, help="focus node for --measure sc")
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--virtual", action="store_true", help="rank absent edges instead of existing ones")
    p.add_argument("--convention", choices=["rank-one", "doubled"], default="rank-one")
    p.add_argument("--alpha", type=int, default=3)
    p.add_argument("--max-iters", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exhaustive", action="store_true", help="evaluate every admissible pair instead of estimating")
    p.set_defaults(func=cmd_top_edges)

    p = sub.add_parser("node-sens", help="sensitivity of the measures to removing each node")
    _add_input(p)
    _add_numeric(p)
    _add_output(p)
    p.add_argument("--focus", default=None, help="also report subgraph-centrality sensitivity of this node")
    p.add_argument("--node", default=None, help="only report this node")
    p.set_defaults(func=cmd_node_sens)

    p = sub.add_parser("bounds", help="a priori decay bounds on subgraph-centrality sensitivities")
    _add_input(p)
    _add_output(p)
    p.add_argument("--remove-node", default=None)
    p.add_argument("--edge", nargs=2, default=None, metavar=("I", "J"))
    p.add_argument("--spectrum", choices=["exact", "lanczos", "gershgorin", "norm-bound", "refined"], default="exact")
    p.add_argument("--lambda-min", type=float, default=None)
    p.add_argument("--lambda-max", type=float, default=None)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("bench", help="scaling benchmark on random geometric graphs")
    _add_output(p)
    p.add_argument("--sizes", type=int, nargs="+", default=list(BENCH_SIZES))
    p.add_argument("--degree", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--alpha", type=int, default=3)
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", help="write a generated or bundled graph")
    p.add_argument("kind", choices=["rgg", "florentine"])
    p.add_argument("--n", type=int)
    p.add_argument("--degree", type=float, default=10.0)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--to", choices=["mtx", "edges"], default="mtx")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_gen, output="raw")

    p = sub.add_parser("apply-update", help="total communicability before and after adding edges")
    _add_input(p)
    _add_output(p)
    p.add_argument("--add", default=None, help="edges as 'i,j[,w]' items separated by spaces or ';'")
    p.add_argument("--edges-file", default=None, help="edge list with the edges to add")
    p.add_argument("--dense", action="store_true", help="use the dense exponential (small graphs)")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_apply_update)

    p = sub.add_parser("communicability", help="total communicability, Estrada index, subgraph centralities")
    _add_input(p)
    _add_numeric(p)
    _add_output(p)
    p.add_argument("--focus", default=None)
    p.add_argument("--all-nodes", action="store_true")
    p.set_defaults(func=cmd_communicability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="netsens: %(levelname)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    _node.zero_based = getattr(args, "zero_based", False)
    try:
        with _threads(args.threads):
            result = args.func(args)
    except CommandError as exc:
        print(f"netsens: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, IndexError, OSError) as exc:
        print(f"netsens: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if isinstance(result, str):
        sys.stdout.write(result)
        return EXIT_OK
    sys.stdout.write(render(result, args.output))
    return result.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
