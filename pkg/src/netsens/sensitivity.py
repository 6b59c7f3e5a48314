"""Communicability measures and their sensitivities to edge and node changes.

All edge sensitivities are entries of a single matrix:

* total communicability: ``S_ij = [L_exp(A^T, 1 1^T)]_ij``
* subgraph centrality of ``u``: ``S_ij(u) = [L_exp(A^T, e_u e_u^T)]_ij``
* Estrada index: ``S_ij = [exp(A^T)]_ij``

Values use the rank-one convention (direction ``e_i e_j^T``) unless the
``doubled`` convention is requested, which multiplies undirected-graph
values by two (direction ``e_i e_j^T + e_j e_i^T``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dense
from .graph import EdgePair, Graph
from .krylov import KrylovConvergenceWarning, LowRankFrechet, expm_action, krylov_frechet
from .maxelem import MaskedOperator, TopPConfig, top_p

MEASURES = ("tn", "sc", "ee")
CONVENTIONS = ("rank-one", "doubled")
ESTRADA_DENSE_CAP = 2000
FD_DENSE_CAP = 512
DEFAULT_TOL = 1e-3
DEFAULT_M_MAX = 100
RANK_RTOL = 1e-14


class UnsupportedSizeError(ValueError):
    """The requested dense computation exceeds the configured size cap."""


@dataclass(frozen=True)
class Measure:
    """Which communicability measure a sensitivity refers to.

    ``kind`` is ``"tn"`` (total communicability), ``"sc"`` (subgraph
    centrality of node ``focus``) or ``"ee"`` (Estrada index).
    """

    kind: str
    focus: int | None = None

    def __post_init__(self):
        if self.kind not in MEASURES:
            raise ValueError(f"unknown measure {self.kind!r}; expected one of {MEASURES}")
        if self.kind == "sc" and self.focus is None:
            raise ValueError("subgraph centrality sensitivity needs a focus node")

    @classmethod
    def parse(cls, kind, focus=None) -> "Measure":
        if isinstance(kind, Measure):
            return kind
        return cls(str(kind).lower(), focus if str(kind).lower() == "sc" else None)

    def __str__(self):
        return f"sc@{self.focus}" if self.kind == "sc" else self.kind


@dataclass
class SensitivityReport:
    measure: Measure
    entries: list
    convention: str = "rank-one"
    tol: float = DEFAULT_TOL
    krylov_dim: int = 0
    statuses: list = field(default_factory=list)
    estimator_iterations: int = 0

    @property
    def ok(self) -> bool:
        return not self.statuses

    def pairs(self):
        return [(e.i, e.j) for e in self.entries]

    def values(self):
        return np.array([e.value for e in self.entries])


def _measure(measure, focus=None) -> Measure:
    return Measure.parse(measure, focus)


def _check_node(g: Graph, v, name="node"):
    if not 0 <= v < g.n:
        raise IndexError(f"{name} {v} out of range for n={g.n}")


def _direction_vectors(g: Graph, measure: Measure):
    if measure.kind == "tn":
        one = np.ones(g.n)
        return one, one
    _check_node(g, measure.focus, "focus node")
    e = dense.unit(g.n, measure.focus)
    return e, e


def frechet_factor(g: Graph, measure, tol=DEFAULT_TOL, m_max=DEFAULT_M_MAX) -> LowRankFrechet:
    """The factored matrix whose entries are all TN or SC edge sensitivities.

    The user tolerance is divided by ``n`` because it applies to the whole
    sensitivity matrix rather than to a single entry.
    """
    measure = _measure(measure)
    if measure.kind == "ee":
        raise ValueError("Estrada sensitivities are entries of exp(A^T), not of a Frechet derivative")
    b, c = _direction_vectors(g, measure)
    return krylov_frechet(g, b, c, tol=tol / g.n, m_max=m_max)


def total_communicability(g: Graph, tol=DEFAULT_TOL, m_max=DEFAULT_M_MAX) -> float:
    """``1^T exp(A) 1``."""
    if g.n == 0:
        return 0.0
    return float(expm_action(g, np.ones(g.n), tol=tol, m_max=m_max).sum())


def node_communicability(g: Graph, tol=DEFAULT_TOL, m_max=DEFAULT_M_MAX):
    """Row sums ``exp(A) 1`` (communicability of each node with the network)."""
    return expm_action(g, np.ones(g.n), tol=tol, m_max=m_max)


def subgraph_centrality(g: Graph, v: int, tol=DEFAULT_TOL, m_max=DEFAULT_M_MAX) -> float:
    """``[exp(A)]_vv`` via a Krylov approximation of ``exp(A) e_v``."""
    _check_node(g, v)
    return float(expm_action(g, dense.unit(g.n, v), tol=tol, m_max=m_max)[v])


def estrada_index(g: Graph, cap=ESTRADA_DENSE_CAP) -> float:
    """``trace(exp(A))`` computed densely; refuses graphs with more than ``cap`` nodes."""
    if g.n > cap:
        raise UnsupportedSizeError(
            f"estrada_index is dense and capped at n={cap}; use subgraph_centrality per node instead"
        )
    A = g.A.toarray()
    if not g.directed:
        return float(np.exp(np.linalg.eigvalsh(A)).sum())
    return float(np.trace(dense.expm(A)))


def _convention_factor(g: Graph, convention):
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    return 2.0 if convention == "doubled" and not g.directed else 1.0


def edge_sensitivity(g: Graph, measure, i, j, tol=DEFAULT_TOL, m_max=DEFAULT_M_MAX, convention="rank-one"):
    """Rate of change of the measure with respect to the weight ``w_ij``."""
    measure = _measure(measure)
    _check_node(g, i)
    _check_node(g, j)
    if i == j:
        raise ValueError("self-loops are not allowed (i == j)")
    factor = _convention_factor(g, convention)
    if measure.kind == "ee":
        if not g.directed:
            # exp(A) is symmetric; one orientation keeps S_ij and S_ji bitwise equal
            i, j = min(i, j), max(i, j)
        col = expm_action(g, dense.unit(g.n, j), tol=tol, m_max=m_max, transposed=True)
        return factor * float(col[i])
    L = frechet_factor(g, measure, tol=tol, m_max=m_max)
    return factor * L.entry(i, j)


def mask_pairs(g: Graph, mask="existing"):
    """Admissible ``(rows, cols)`` for a named mask.

    Undirected graphs only list each unordered pair once (``i < j``).
    ``mask`` may also be an explicit ``(k, 2)`` array of pairs.
    """
    if not isinstance(mask, str):
        pairs = np.asarray(mask, dtype=np.int64).reshape(-1, 2)
        return pairs[:, 0], pairs[:, 1]
    if mask == "existing":
        rows, cols, _ = g.edges()
    elif mask == "virtual":
        P = g.pattern.toarray().astype(bool)
        np.fill_diagonal(P, True)
        rows, cols = np.nonzero(~P)
    elif mask == "all":
        rows, cols = np.nonzero(~np.eye(g.n, dtype=bool))
    else:
        raise ValueError(f"unknown mask {mask!r}")
    if not g.directed:
        keep = rows < cols
        rows, cols = rows[keep], cols[keep]
    return rows, cols


def _exp_entries(g: Graph, rows, cols, tol, m_max):
    """Entries ``[exp(A^T)]_ij`` grouped by column."""
    vals = np.empty(len(rows))
    order = np.argsort(cols, kind="stable")
    rows, cols = rows[order], cols[order]
    starts = np.flatnonzero(np.r_[True, cols[1:] != cols[:-1]]) if len(cols) else []
    bounds = list(starts) + [len(cols)]
    for a, b in zip(bounds[:-1], bounds[1:]):
        column = expm_action(g, dense.unit(g.n, cols[a]), tol=tol, m_max=m_max, transposed=True)
        vals[order[a:b]] = column[rows[a:b]]
    return vals


def _sorted_entries(rows, cols, vals, n):
    order = np.lexsort((rows * n + cols, -vals))
    return [EdgePair(int(rows[k]), int(cols[k]), float(vals[k])) for k in order]


def all_edge_sensitivities(
    g: Graph, measure, mask="existing", tol=DEFAULT_TOL, m_max=DEFAULT_M_MAX, convention="rank-one"
) -> SensitivityReport:
    """Sensitivities for every admissible pair of ``mask``, sorted descending.

    TN and SC values are entries of one factored Frechet derivative; Estrada
    values are entries of ``exp(A^T)``, one Krylov action per column.
    """
    measure = _measure(measure)
    factor = _convention_factor(g, convention)
    rows, cols = mask_pairs(g, mask)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    statuses = []
    dim = 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", KrylovConvergenceWarning)
        if measure.kind == "ee":
            vals = _exp_entries(g, rows, cols, tol, m_max)
        else:
            L = frechet_factor(g, measure, tol=tol, m_max=m_max)
            dim = L.iterations
            vals = L.entries(rows, cols) if len(rows) else np.zeros(0)
    if any(issubclass(w.category, KrylovConvergenceWarning) for w in caught):
        statuses.append("krylov-not-converged")
    vals = factor * vals
    return SensitivityReport(
        measure=measure,
        entries=_sorted_entries(rows, cols, vals, g.n),
        convention=convention,
        tol=tol,
        krylov_dim=dim,
        statuses=statuses,
    )


def _ee_factors(g: Graph, tol, m_max):
    """Factors ``B, C`` with ``B C^T = exp(A^T)`` (up to truncation)."""
    n = g.n
    if not g.directed and n <= ESTRADA_DENSE_CAP:
        lam, U = np.linalg.eigh(g.A.toarray())
        F = U * np.exp(lam / 2)
        return F, F, False
    if not g.directed:
        from scipy.sparse.linalg import eigsh

        k = min(n - 1, 64)
        lam, U = eigsh(g.A, k=k, which="LA")
        F = U * np.exp(lam / 2)
        return F, F, True
    return None, None, False


def top_p_edges(
    g: Graph,
    measure,
    p=10,
    virtual=False,
    tol=DEFAULT_TOL,
    cfg: TopPConfig | None = None,
    m_max=DEFAULT_M_MAX,
    convention="rank-one",
) -> SensitivityReport:
    """Estimate the ``p`` existing (or virtual) edges with highest sensitivity.

    For TN/SC the Krylov factors are balanced through an SVD of the small
    core matrix and handed to the masked top-p estimator. Existing edges
    are few enough to be evaluated exactly from the same factors. For
    undirected graphs only pairs with ``i < j`` are considered.
    """
    measure = _measure(measure)
    factor = _convention_factor(g, convention)
    cfg = cfg or TopPConfig(p=p)
    if cfg.p != p:
        cfg = TopPConfig(p=p, alpha=cfg.alpha, max_iters=cfg.max_iters, seed=cfg.seed)
    if virtual:
        mask = "virtual" if g.directed else "virtual-upper"
    else:
        mask = "existing" if g.directed else "existing-upper"
    statuses = []
    dim = 0

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", KrylovConvergenceWarning)
        if measure.kind == "ee":
            B, C, truncated = _ee_factors(g, tol, m_max)
            if truncated:
                statuses.append("ee-truncated-eigenbasis")
            if B is None:
                # directed graphs: exp(A^T) has no cheap low-rank form, evaluate exactly
                report = all_edge_sensitivities(
                    g, measure, mask="virtual" if virtual else "existing", tol=tol, m_max=m_max,
                    convention=convention,
                )
                report.entries = report.entries[:p]
                report.statuses.append("ee-columnwise")
                return report
        else:
            L = frechet_factor(g, measure, tol=tol, m_max=m_max)
            dim = L.iterations
            U, s, Vx = dense.thin_svd(L.X)
            # singular values far below the Krylov accuracy only add cost
            keep = max(1, int(np.count_nonzero(s > RANK_RTOL * s[0]))) if len(s) and s[0] > 0 else 1
            root = np.sqrt(s[:keep] * L.scale)
            B = (L.V @ U[:, :keep]) * root
            C = (L.W @ Vx[:, :keep]) * root
    if any(issubclass(w.category, KrylovConvergenceWarning) for w in caught):
        statuses.append("krylov-not-converged")

    op = MaskedOperator(B, C, mask=mask, pattern=g)
    if op.count_admissible() == 0:
        return SensitivityReport(measure, [], convention, tol, dim, statuses + ["no-admissible-pairs"])
    if not virtual:
        # only nnz candidates: evaluating them all from the factors is cheaper than estimating
        rows, cols = mask_pairs(g, "existing")
        vals = factor * op.lowrank_entries(np.asarray(rows), np.asarray(cols))
        top = _sorted_entries(np.asarray(rows), np.asarray(cols), vals, g.n)[:p]
        return SensitivityReport(measure, top, convention, tol, dim, statuses)
    result = top_p(op, cfg)
    if result.status == "estimator-warning":
        statuses.append("estimator-warning")
    entries = [EdgePair(e.i, e.j, factor * e.value) for e in result.entries]
    return SensitivityReport(
        measure=measure,
        entries=entries,
        convention=convention,
        tol=tol,
        krylov_dim=dim,
        statuses=statuses,
        estimator_iterations=result.iterations,
    )


def node_removal_sensitivity(g: Graph, measure, v, tol=DEFAULT_TOL, m_max=DEFAULT_M_MAX, factor=None):
    """Sensitivity to removing node ``v``: direction ``-(e_v a_{v:} + a_{:v} e_v^T)``.

    The value is signed (removal lowers communicability, so it is normally
    negative). ``factor`` may pass a precomputed ``frechet_factor`` for TN/SC.
    """
    measure = _measure(measure)
    _check_node(g, v)
    out_nodes, out_w = g.out_edges(v)
    in_nodes, in_w = g.in_edges(v)
    if not len(out_nodes) and not len(in_nodes):
        return 0.0
    if measure.kind == "ee":
        # [exp(A^T)]_{vj} is entry j of exp(A) e_v; [exp(A^T)]_{iv} entry i of exp(A^T) e_v
        col = expm_action(g, dense.unit(g.n, v), tol=tol, m_max=m_max)
        row = col if not g.directed else expm_action(g, dense.unit(g.n, v), tol=tol, m_max=m_max, transposed=True)
        total = out_w @ col[out_nodes] + in_w @ row[in_nodes]
        return -float(total)
    L = factor if factor is not None else frechet_factor(g, measure, tol=tol, m_max=m_max)
    total = out_w @ L.entries(np.full(len(out_nodes), v), out_nodes)
    total += in_w @ L.entries(in_nodes, np.full(len(in_nodes), v))
    return -float(total)


def dense_measure(A, measure) -> float:
    """Reference value of a measure from a dense adjacency matrix."""
    measure = _measure(measure)
    F = dense.expm(A)
    if measure.kind == "tn":
        return float(F.sum())
    if measure.kind == "sc":
        return float(F[measure.focus, measure.focus])
    return float(np.trace(F))


def finite_difference_check(g: Graph, measure, i, j, h=1e-5, tol=1e-10, m_max=DEFAULT_M_MAX, cap=FD_DENSE_CAP):
    """Compare the analytic sensitivity with a central difference of the measure.

    Returns ``(analytic, numeric)``; the perturbation is the single directed
    entry ``(i, j)`` so the rank-one convention applies.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if g.n > cap:
        raise UnsupportedSizeError(f"finite differences are dense and capped at n={cap}")
    measure = _measure(measure)
    A = g.A.toarray()
    E = dense.edge_direction(g.n, i, j)
    numeric = (dense_measure(A + h * E, measure) - dense_measure(A - h * E, measure)) / (2 * h)
    analytic = edge_sensitivity(g, measure, i, j, tol=tol, m_max=m_max)
    return analytic, numeric
