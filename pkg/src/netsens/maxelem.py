"""Estimating the largest-magnitude entries of implicitly given matrices.

Matrices are only accessed through products with vectors (and with the
transpose). ``MaskedOperator`` realizes ``M o (B C^T)`` for a sparse or
structured 0/1 mask ``M`` and thin factors ``B``, ``C`` at the cost of
``r`` mask products per matvec.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .graph import EdgePair, Graph

MASKS = ("existing", "existing-upper", "virtual", "virtual-upper", "explicit")


class EstimatorWarning(RuntimeWarning):
    """The top-p estimator returned fewer entries than requested."""


@dataclass
class TopPConfig:
    """Settings of the blocked top-p estimator."""

    p: int = 10
    alpha: int = 3
    max_iters: int = 10
    seed: int | None = 0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be at least 1")
        if self.alpha < 1:
            raise ValueError("alpha must be at least 1")


@dataclass
class TopPResult:
    entries: list
    iterations: int
    converged: bool
    status: str = "ok"
    matvecs: int = 0

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


class MaskedOperator(LinearOperator):
    """The implicit matrix ``M o (B C^T)`` with optional excluded entries.

    Parameters
    ----------
    B, C : ndarray, shape (n, r)
        Thin factors.
    mask : str
        One of ``existing``, ``existing-upper``, ``virtual``,
        ``virtual-upper`` (all derived from ``pattern``) or ``explicit``.
    pattern : sparse matrix or Graph, optional
        Adjacency pattern for the graph masks, or the mask itself for
        ``explicit``. Only the nonzero structure is used.
    exclusions : iterable of (i, j), optional
        Entries treated as zero. Their values are cached on construction.
    """

    def __init__(self, B, C, mask="explicit", pattern=None, exclusions=()):
        B = np.atleast_2d(np.asarray(B, dtype=float))
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if B.ndim != 2 or C.ndim != 2 or B.shape[1] != C.shape[1]:
            raise ValueError("B and C must be 2-d with the same number of columns")
        if mask not in MASKS:
            raise ValueError(f"unknown mask {mask!r}; expected one of {MASKS}")
        if isinstance(pattern, Graph):
            pattern = pattern.A
        if pattern is None:
            if mask != "explicit":
                raise ValueError(f"mask {mask!r} requires an adjacency pattern")
            P = None
        else:
            P = sp.csr_matrix(pattern, dtype=float, copy=True)
            P.eliminate_zeros()
            P.data[:] = 1.0
            if P.shape != (B.shape[0], C.shape[0]):
                raise ValueError(f"pattern shape {P.shape} does not match factors")
        if mask != "explicit" and B.shape[0] != C.shape[0]:
            raise ValueError("graph masks require square operators")
        if mask in ("existing-upper",):
            P = sp.triu(P, k=1, format="csr")
        if mask in ("virtual", "virtual-upper"):
            P = P.tolil()
            P.setdiag(0)
            P = P.tocsr()
            P.eliminate_zeros()
            if mask == "virtual-upper":
                P = sp.triu(P, k=1, format="csr")
        super().__init__(dtype=np.float64, shape=(B.shape[0], C.shape[0]))
        self.B = B
        self.C = C
        self.mask = mask
        self._P = P
        self._PT = None if P is None else P.T.tocsr()
        self._SP = None
        self._SPT = None
        self._excl_rows = np.zeros(0, dtype=np.int64)
        self._excl_cols = np.zeros(0, dtype=np.int64)
        self._excl_vals = np.zeros(0)
        self.matvecs = 0
        self.exclude(exclusions)

    @property
    def exclusions(self):
        return dict(
            zip(zip(self._excl_rows.tolist(), self._excl_cols.tolist()), self._excl_vals.tolist())
        )

    def exclude(self, pairs):
        """Add entries to the exclusion set (inadmissible pairs are ignored)."""
        pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        if not len(pairs):
            return
        keep = self.admissible(pairs[:, 0], pairs[:, 1])
        pairs = np.unique(pairs[keep], axis=0)
        if not len(pairs):
            return
        rows = np.concatenate([self._excl_rows, pairs[:, 0]])
        cols = np.concatenate([self._excl_cols, pairs[:, 1]])
        rows, cols = np.unique(np.stack([rows, cols], axis=1), axis=0).T
        self._excl_rows, self._excl_cols = rows, cols
        self._excl_vals = self.lowrank_entries(rows, cols)

    def lowrank_entries(self, rows, cols):
        """Entries of ``B C^T`` (ignoring the mask) at the given positions."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        return np.einsum("ij,ij->i", self.B[rows], self.C[cols])

    def _mask_values(self, rows, cols):
        if self.mask == "explicit" and self._P is None:
            return np.ones(len(rows), dtype=bool)
        in_pattern = np.asarray(self._P[rows, cols]).ravel() != 0 if len(rows) else np.zeros(0, bool)
        if self.mask in ("existing", "existing-upper", "explicit"):
            return in_pattern
        ok = ~in_pattern & (rows != cols)
        if self.mask == "virtual-upper":
            ok &= rows < cols
        return ok

    def admissible(self, rows, cols):
        """Boolean array: inside the mask and not excluded."""
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        ok = self._mask_values(rows, cols)
        if len(self._excl_rows) and len(rows):
            ncols = self.shape[1]
            excl = np.isin(rows * ncols + cols, self._excl_rows * ncols + self._excl_cols)
            ok &= ~excl
        return ok

    def admissible_line(self, index, axis):
        """Admissibility of a whole row (``axis=0``) or column (``axis=1``)."""
        n1, n2 = self.shape
        length = n2 if axis == 0 else n1
        if self._P is None:
            ok = np.ones(length, dtype=bool)
        else:
            P = self._P if axis == 0 else self._PT
            in_pattern = np.zeros(length, dtype=bool)
            in_pattern[P.indices[P.indptr[index] : P.indptr[index + 1]]] = True
            if self.mask in ("existing", "existing-upper", "explicit"):
                ok = in_pattern
            else:
                ok = ~in_pattern
                ok[index] = False
                if self.mask == "virtual-upper":
                    # row i keeps j > i; column j keeps i < j
                    if axis == 0:
                        ok[: index + 1] = False
                    else:
                        ok[index:] = False
        if len(self._excl_rows):
            if axis == 0:
                ok[self._excl_cols[self._excl_rows == index]] = False
            else:
                ok[self._excl_rows[self._excl_cols == index]] = False
        return ok

    def count_admissible(self) -> int:
        n1, n2 = self.shape
        nnz = 0 if self._P is None else self._P.nnz
        if self.mask == "explicit" and self._P is None:
            total = n1 * n2
        elif self.mask in ("existing", "existing-upper", "explicit"):
            total = nnz
        elif self.mask == "virtual":
            total = n1 * (n1 - 1) - nnz
        else:
            total = n1 * (n1 - 1) // 2 - nnz
        return total - len(self._excl_rows)

    def _pattern_values(self, transposed):
        """The mask pattern carrying the values of ``B C^T`` (cached)."""
        if self._SP is None:
            P = self._P.tocoo()
            vals = self.lowrank_entries(P.row, P.col)
            self._SP = sp.csr_matrix((vals, (P.row, P.col)), shape=P.shape)
            self._SPT = self._SP.T.tocsr()
        return self._SPT if transposed else self._SP

    def _strict_triangle(self, X, transposed):
        """Product with ``triu(B C^T, 1)`` (or its transpose) by cumulative sums."""
        left, right = (self.C, self.B) if transposed else (self.B, self.C)
        n, r = right.shape
        k = X.shape[1]
        Y = np.empty((left.shape[0], k))
        # keep the (n, r, chunk) intermediate around a few MB
        chunk = max(1, int(2**19 // max(n * r, 1)))
        for a in range(0, k, chunk):
            Xa = X[:, a : a + chunk]
            Z = right[:, :, None] * Xa[:, None, :]
            if not transposed:
                # row i sums over j > i
                acc = np.cumsum(Z[::-1], axis=0)[::-1] - Z
            else:
                acc = np.cumsum(Z, axis=0) - Z
            Y[:, a : a + chunk] = np.einsum("il,ilk->ik", left, acc)
        return Y

    def _product(self, X, transposed):
        X = np.asarray(X, dtype=float)
        vec = X.ndim == 1
        if vec:
            X = X[:, None]
        left, right = (self.C, self.B) if transposed else (self.B, self.C)
        if X.shape[0] != right.shape[0]:
            raise ValueError(f"dimension mismatch: expected {right.shape[0]} rows, got {X.shape[0]}")
        if self.mask == "explicit" and self._P is None:
            Y = left @ (right.T @ X)
        elif self.mask in ("existing", "existing-upper", "explicit"):
            Y = self._pattern_values(transposed) @ X
        elif self.mask == "virtual":
            # (ones - I - P) o B C^T
            diag = np.einsum("ij,ij->i", self.B, self.C)
            Y = left @ (right.T @ X) - diag[:, None] * X - self._pattern_values(transposed) @ X
        else:
            Y = self._strict_triangle(X, transposed) - self._pattern_values(transposed) @ X
        if len(self._excl_rows):
            rows, cols = (self._excl_cols, self._excl_rows) if transposed else (self._excl_rows, self._excl_cols)
            np.add.at(Y, rows, -self._excl_vals[:, None] * X[cols])
        self.matvecs += X.shape[1]
        return Y[:, 0] if vec else Y

    def _matvec(self, x):
        return self._product(np.ravel(x), False)

    def _rmatvec(self, x):
        return self._product(np.ravel(x), True)

    def _matmat(self, X):
        return self._product(X, False)

    def _rmatmat(self, X):
        return self._product(X, True)

    def _adjoint(self):
        return _Adjoint(self)

    def to_dense(self):
        """Dense representation (for testing only)."""
        n1, n2 = self.shape
        return self._product(np.eye(n2), False)


class _Adjoint(LinearOperator):
    def __init__(self, op):
        super().__init__(dtype=op.dtype, shape=(op.shape[1], op.shape[0]))
        self.op = op

    def _matvec(self, x):
        return self.op._rmatvec(x)

    def _rmatvec(self, x):
        return self.op._matvec(x)

    def _matmat(self, X):
        return self.op._rmatmat(X)


def masked_matvec(op: MaskedOperator, x, transposed=False):
    """Exact product with ``op`` (or its transpose)."""
    return op.rmatvec(x) if transposed else op.matvec(x)


def power_max(S, max_iters=10):
    """Power method for the largest-modulus entry of an implicit matrix.

    Follows the classic alternating scheme: ``y = S x``, pick the row ``i``
    maximizing ``|y|``, ``g = S^T e_i``, pick the column ``j`` maximizing
    ``|g|``, ``x = e_j``, with the first index taken on ties.

    Returns
    -------
    gamma : float
        ``|s_ij|``; always a lower bound for the largest modulus.
    i, j : int
        Location of the returned entry.
    converged : bool
        False if ``max_iters`` iterations ran without meeting a quit test.
    """
    S = aslinearoperator(S)
    n1, n2 = S.shape
    x = np.full(n2, 1.0 / n2)
    g = None
    i = j = 0
    for k in range(1, max_iters + 1):
        y = S.matvec(x)
        ynorm = np.abs(y).max()
        if k > 1 and ynorm <= np.abs(g).max():
            return float(np.abs(g).max()), i, j, True
        i = int(np.argmax(np.abs(y)))
        e = np.zeros(n1)
        e[i] = 1.0
        g = S.rmatvec(e)
        j = int(np.argmax(np.abs(g)))
        if ynorm <= np.abs(g[j]):
            return float(np.abs(g[j])), i, j, True
        x = np.zeros(n2)
        x[j] = 1.0
    return float(np.abs(g[j])), i, j, False


def _column_norm_estimate(S, t, rng):
    """Estimate squared column norms of ``S`` from ``t`` random sign probes."""
    n1 = S.shape[0]
    Z = rng.choice([-1.0, 1.0], size=(n1, t))
    R = S.rmatmat(Z) if hasattr(S, "rmatmat") else np.column_stack([S.rmatvec(z) for z in Z.T])
    return (R**2).sum(axis=1)


def _top_unvisited(scores, visited, t):
    order = np.lexsort((np.arange(scores.size), -scores))
    picked = [int(k) for k in order if k not in visited][:t]
    return picked


def _all_admissible(index, axis):
    return None


def _run_blocked(S, p, alpha, max_iters, rng, admissible):
    """One blocked search harvesting up to ``p`` admissible entries.

    Alternates column scans ``S e_j`` and row scans ``S^T e_i`` over
    ``alpha * p`` indices at a time, so every recorded value is an exact
    entry of ``S``. Quits as soon as a half-step leaves the current top-p
    list unchanged.
    """
    n1, n2 = S.shape
    t = max(1, alpha * p)
    found = {}

    def record(index, axis, vals):
        ok = admissible(index, axis)
        if ok is None:
            ok = np.ones(vals.size, dtype=bool)
        # only the strongest entries of a line can enter the top p
        idx = np.flatnonzero(ok)
        if idx.size > p:
            part = np.argpartition(-np.abs(vals[idx]), p - 1)[:p]
            cut = np.abs(vals[idx[part]]).min()
            idx = idx[np.abs(vals[idx]) >= cut]
        for k in idx.tolist():
            key = (index, k) if axis == 0 else (k, index)
            found[key] = float(vals[k])

    def best_p():
        items = sorted(found.items(), key=lambda kv: (-abs(kv[1]), kv[0][0] * n2 + kv[0][1]))
        return items[:p]

    visited_rows, visited_cols = set(), set()
    est = _column_norm_estimate(S, min(t, 8), rng)
    col_ids = [None] + _top_unvisited(est, visited_cols, min(t - 1, n2))
    matvecs = min(t, 8)
    last = None
    stall = 0
    patience = 2
    converged = False
    k = 0
    for k in range(1, max_iters + 1):
        X = np.zeros((n2, len(col_ids)))
        for idx, c in enumerate(col_ids):
            if c is None:
                X[:, idx] = 1.0 / n2
            else:
                X[c, idx] = 1.0
        Y = S.matmat(X)
        matvecs += X.shape[1]
        for idx, c in enumerate(col_ids):
            if c is not None:
                visited_cols.add(c)
                record(c, 1, Y[:, idx])
        current = best_p()
        stall = stall + 1 if current == last else 0
        if stall >= patience:
            converged = True
            break
        last = current

        row_scores = np.abs(Y).max(axis=1)
        forced = []
        if col_ids[0] is None:
            # the uniform probe's maximizer is always scanned, as in the unblocked method
            forced = [int(np.argmax(np.abs(Y[:, 0])))]
        rows = forced + [r for r in _top_unvisited(row_scores, visited_rows | set(forced), t) if r not in forced]
        rows = [r for r in rows if r not in visited_rows][:t]
        if not rows:
            converged = True
            break
        E = np.zeros((n1, len(rows)))
        E[rows, np.arange(len(rows))] = 1.0
        G = S.rmatmat(E)
        matvecs += len(rows)
        for idx, r in enumerate(rows):
            visited_rows.add(r)
            record(r, 0, G[:, idx])
        current = best_p()
        stall = stall + 1 if current == last else 0
        if stall >= patience and found:
            converged = True
            break
        last = current

        col_scores = np.abs(G).max(axis=1)
        col_ids = _top_unvisited(col_scores, visited_cols, t)
        if not col_ids:
            converged = True
            break
    return best_p(), k, converged, matvecs


def top_p(S, cfg: TopPConfig | None = None, **kwargs) -> TopPResult:
    """Estimate the ``p`` largest-modulus admissible entries of ``S``.

    ``S`` is a ``MaskedOperator`` (entries outside the mask or excluded are
    never returned) or any linear operator (all entries admissible). Each
    search uses ``alpha * p`` probe vectors per half-iteration. When a search
    yields fewer than ``p`` entries, the entries found so far are deflated
    and the search is repeated; if that stops making progress the shorter
    list is returned with status ``estimator-warning``.
    """
    cfg = cfg or TopPConfig(**kwargs)
    rng = np.random.default_rng(cfg.seed)
    masked = isinstance(S, MaskedOperator)
    if masked:
        admissible = S.admissible_line
        available = S.count_admissible()
    else:
        S = aslinearoperator(S)
        available = S.shape[0] * S.shape[1]
        admissible = _all_admissible

    if available <= 0:
        return TopPResult([], 0, True, status="empty", matvecs=0)
    p = min(cfg.p, available)
    entries = []
    iterations = 0
    converged = True
    matvecs = 0
    saved = S.exclusions if masked else None
    try:
        while len(entries) < p:
            need = p - len(entries)
            got, its, conv, mv = _run_blocked(S, need, cfg.alpha, cfg.max_iters, rng, admissible)
            iterations = max(iterations, its)
            converged &= conv
            matvecs += mv
            if not got:
                break
            entries.extend(got)
            if len(entries) < p:
                if not masked:
                    break
                S.exclude([ij for ij, _ in got])
    finally:
        if masked:
            S._excl_rows = np.zeros(0, dtype=np.int64)
            S._excl_cols = np.zeros(0, dtype=np.int64)
            S._excl_vals = np.zeros(0)
            S.exclude(saved.keys())

    if masked and entries:
        rows = np.array([ij[0] for ij, _ in entries])
        cols = np.array([ij[1] for ij, _ in entries])
        vals = S.lowrank_entries(rows, cols)
    else:
        vals = [v for _, v in entries]
    out = [EdgePair(int(ij[0]), int(ij[1]), float(v)) for (ij, _), v in zip(entries, vals)]
    n2 = S.shape[1]
    out.sort(key=lambda e: (-abs(e.value), e.i * n2 + e.j))
    status = "ok"
    if len(out) < p:
        status = "estimator-warning"
        warnings.warn(
            f"top-p estimator found {len(out)} of {p} requested entries", EstimatorWarning, stacklevel=2
        )
    elif not converged:
        status = "max-iters"
    return TopPResult(out, iterations, converged, status=status, matvecs=matvecs)
