"""Krylov approximation of exp-Frechet derivatives with rank-one directions.

``krylov_frechet`` builds orthonormal bases of K_m(A^T, b) and K_m(A, c) in
lockstep and represents ``L_exp(A^T, b c^T)`` in factored form
``scale * V @ X @ W.T``, where ``X`` is the upper right block of the
exponential of a small block upper triangular matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dense import expm
from .graph import Graph

BREAKDOWN_RTOL = 1e-14
# increments below this multiple of eps * |iterate| are pure roundoff
_ROUNDOFF_FLOOR = 64 * np.finfo(float).eps


class KrylovConvergenceWarning(RuntimeWarning):
    """The Krylov iteration hit its dimension cap before meeting ``tol``."""


@dataclass
class ArnoldiDecomposition:
    """Result of ``m`` Arnoldi (or Lanczos) steps.

    ``V`` holds ``m + 1`` orthonormal columns (only ``m`` after a breakdown)
    and ``H`` is the ``(m + 1) x m`` upper Hessenberg matrix with
    ``A @ V[:, :m] == V @ H``.
    """

    V: np.ndarray
    H: np.ndarray
    m: int
    breakdown: bool

    @property
    def Vm(self):
        return self.V[:, : self.m]

    @property
    def Hm(self):
        return self.H[: self.m, : self.m]

    @property
    def h_next(self) -> float:
        return float(self.H[self.m, self.m - 1])


class _Arnoldi:
    """Incremental Arnoldi/Lanczos process with optional reorthogonalization."""

    def __init__(self, apply, b, capacity, reorth=True, symmetric=False):
        b = np.asarray(b, dtype=float)
        beta = np.linalg.norm(b)
        if beta == 0 or not np.isfinite(beta):
            raise ValueError("starting vector must be nonzero and finite")
        self.apply = apply
        self.reorth = reorth
        self.symmetric = symmetric
        self.V = np.zeros((b.size, capacity + 1))
        self.H = np.zeros((capacity + 1, capacity))
        self.V[:, 0] = b / beta
        self.m = 0
        self.capacity = capacity
        self.breakdown = False
        self.anorm = 0.0

    @property
    def active(self) -> bool:
        return not self.breakdown and self.m < self.capacity

    def step(self):
        j = self.m
        V, H = self.V, self.H
        w = np.asarray(self.apply(V[:, j]), dtype=float).ravel()
        self.anorm = max(self.anorm, float(np.linalg.norm(w)))
        if self.symmetric:
            if j > 0:
                w -= H[j, j - 1] * V[:, j - 1]
                H[j - 1, j] = H[j, j - 1]
            alpha = V[:, j] @ w
            w -= alpha * V[:, j]
            H[j, j] = alpha
            if self.reorth:
                # corrections are at roundoff level; keep only the tridiagonal part
                h = V[:, : j + 1].T @ w
                w -= V[:, : j + 1] @ h
                H[j, j] += h[j]
        else:
            h = V[:, : j + 1].T @ w
            w -= V[:, : j + 1] @ h
            if self.reorth:
                h2 = V[:, : j + 1].T @ w
                w -= V[:, : j + 1] @ h2
                h += h2
            H[: j + 1, j] = h
        beta = np.linalg.norm(w)
        self.m = j + 1
        if beta <= BREAKDOWN_RTOL * self.anorm:
            H[j + 1, j] = 0.0
            self.breakdown = True
            return
        H[j + 1, j] = beta
        V[:, j + 1] = w / beta

    def decomposition(self) -> ArnoldiDecomposition:
        m = self.m
        ncols = m if self.breakdown else m + 1
        return ArnoldiDecomposition(
            V=self.V[:, :ncols].copy(), H=self.H[: m + 1, :m].copy(), m=m, breakdown=self.breakdown
        )


def _as_apply(op):
    if callable(op):
        return op
    return lambda x: op @ x


def arnoldi(apply, b, m_max, reorth=True, symmetric=False) -> ArnoldiDecomposition:
    """Run up to ``m_max`` Arnoldi steps for the operator ``apply`` and vector ``b``.

    ``apply`` is a callable or anything supporting ``@``. With
    ``symmetric=True`` the three-term Lanczos recurrence is used and ``H`` is
    exactly tridiagonal. Iteration stops early on breakdown, i.e. when the
    new subdiagonal entry drops below ``1e-14 * ||A||``.
    """
    proc = _Arnoldi(_as_apply(apply), b, m_max, reorth=reorth, symmetric=symmetric)
    while proc.active:
        proc.step()
    return proc.decomposition()


def _operators(g):
    """Return ``(apply_A, apply_AT, symmetric, n)`` for a Graph or matrix."""
    if isinstance(g, Graph):
        return g.matvec, g.rmatvec, not g.directed, g.n
    if sp.issparse(g):
        A = sp.csr_matrix(g)
        AT = A.T.tocsr()
        return (lambda x: A @ x), (lambda x: AT @ x), (A != AT).nnz == 0, A.shape[0]
    A = np.asarray(g, dtype=float)
    return (lambda x: A @ x), (lambda x: A.T @ x), bool(np.array_equal(A, A.T)), A.shape[0]


@dataclass
class LowRankFrechet:
    """Factored approximation ``scale * V @ X @ W.T`` of ``L_exp(A^T, b c^T)``."""

    V: np.ndarray
    X: np.ndarray
    W: np.ndarray
    scale: float = 1.0
    converged: bool = True
    iterations: int = 0
    increments: list = field(default_factory=list)

    @property
    def shape(self):
        return (self.V.shape[0], self.W.shape[0])

    @property
    def rank(self) -> int:
        return max(self.X.shape)

    def entry(self, u, v) -> float:
        return entry(self, u, v)

    def entries(self, rows, cols):
        """Vectorized ``entry`` for index arrays."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        return self.scale * np.einsum("ij,ij->i", self.V[rows] @ self.X, self.W[cols])

    def matvec(self, x, transposed=False):
        return lr_matvec(self, x, transposed)

    def to_dense(self):
        return self.scale * (self.V @ self.X @ self.W.T)


def _block_X(G, H):
    """Upper right block of exp([[G, e1 e1^T], [0, H^T]])."""
    k1, k2 = G.shape[0], H.shape[0]
    M = np.zeros((k1 + k2, k1 + k2))
    M[:k1, :k1] = G
    M[k1:, k1:] = H.T
    M[0, k1] = 1.0
    return expm(M)[:k1, k1:]


def _pad(X, shape):
    P = np.zeros(shape)
    P[: X.shape[0], : X.shape[1]] = X
    return P


def convergence_norm(prev: LowRankFrechet, curr: LowRankFrechet) -> float:
    """Frobenius norm of ``curr - prev`` for nested factorizations.

    Because the bases are nested and orthonormal, this equals
    ``scale * ||X_curr - pad(X_prev)||_F`` and never touches n-vectors.
    """
    (p1, p2), (c1, c2) = prev.X.shape, curr.X.shape
    grow = (c1 - p1, c2 - p2)
    if min(grow) < 0 or max(grow) != 1:
        raise ValueError(f"factorizations are not nested: {prev.X.shape} -> {curr.X.shape}")
    if not np.isclose(prev.scale, curr.scale, rtol=1e-14, atol=0):
        raise ValueError("factorizations carry different scales")
    return float(curr.scale * np.linalg.norm(curr.X - _pad(prev.X, curr.X.shape)))


def krylov_frechet(g, b, c, tol=1e-3, m_max=100, reorth=True, check_every=1) -> LowRankFrechet:
    """Approximate ``L_exp(A^T, b c^T)`` by a tensorized Krylov method.

    Parameters
    ----------
    g : Graph, sparse matrix or ndarray
        Supplies ``A``.
    b, c : array_like
        Nonzero vectors of the direction term; they are normalized internally
        and the product of their norms is carried in ``scale``.
    tol : float
        Absolute tolerance for the Frobenius norm of the difference between
        consecutive iterates.
    m_max : int
        Cap on the dimension of each Krylov space.
    check_every : int
        Test for convergence only every ``check_every`` steps.

    Returns
    -------
    LowRankFrechet
        ``converged`` is False if ``m_max`` was reached before ``tol``; a
        ``KrylovConvergenceWarning`` is issued in that case.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    apply_A, apply_AT, symmetric, n = _operators(g)
    b = np.asarray(b, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    if b.size != n or c.size != n:
        raise ValueError(f"vectors must have length {n}")
    nb, nc = np.linalg.norm(b), np.linalg.norm(c)
    if nb == 0 or nc == 0:
        raise ValueError("b and c must be nonzero")
    scale = float(nb * nc)
    m_max = max(1, min(int(m_max), n))

    left = _Arnoldi(apply_AT, b, m_max, reorth=reorth, symmetric=symmetric)
    shared = symmetric and np.array_equal(b / nb, c / nc)
    right = left if shared else _Arnoldi(apply_A, c, m_max, reorth=reorth, symmetric=symmetric)

    X_prev = None
    increments = []
    converged = False
    steps = 0
    while True:
        if left.active:
            left.step()
        if not shared and right.active:
            right.step()
        steps += 1
        k1, k2 = left.m, right.m
        X = _block_X(left.H[:k1, :k1], right.H[:k2, :k2])
        exact = (left.breakdown or left.m == n) and (right.breakdown or right.m == n)
        if X_prev is not None:
            inc = scale * float(np.linalg.norm(X - _pad(X_prev, X.shape)))
            increments.append(inc)
            floor = _ROUNDOFF_FLOOR * scale * float(np.linalg.norm(X))
            if steps % check_every == 0 and inc <= max(tol, floor):
                converged = True
        if exact:
            converged = True
        if converged or not (left.active or right.active):
            break
        X_prev = X

    if not converged:
        warnings.warn(
            f"Krylov Frechet iteration reached m_max={m_max} without meeting tol={tol:g}",
            KrylovConvergenceWarning,
            stacklevel=2,
        )
    return LowRankFrechet(
        V=left.V[:, : left.m].copy(),
        X=X,
        W=right.V[:, : right.m].copy(),
        scale=scale,
        converged=converged,
        iterations=steps,
        increments=increments,
    )


def entry(L: LowRankFrechet, u: int, v: int) -> float:
    """Entry ``(u, v)`` of the factored matrix in O(m^2) operations."""
    n1, n2 = L.shape
    if not (0 <= u < n1 and 0 <= v < n2):
        raise IndexError(f"entry ({u}, {v}) out of range for shape {L.shape}")
    return float(L.scale * (L.V[u] @ L.X @ L.W[v]))


def lr_matvec(L: LowRankFrechet, x, transposed=False):
    """Product with the factored matrix (or its transpose) in O(nm + m^2)."""
    x = np.asarray(x, dtype=float)
    n1, n2 = L.shape
    if transposed:
        if x.shape[0] != n1:
            raise ValueError(f"expected vector of length {n1}, got {x.shape[0]}")
        return L.scale * (L.W @ (L.X.T @ (L.V.T @ x)))
    if x.shape[0] != n2:
        raise ValueError(f"expected vector of length {n2}, got {x.shape[0]}")
    return L.scale * (L.V @ (L.X @ (L.W.T @ x)))


def expm_action(g, x, tol=1e-8, m_max=100, transposed=False, reorth=True, full_output=False):
    """Approximate ``exp(A) @ x`` (or ``exp(A^T) @ x``) with an Arnoldi method.

    Stops when the norm of the difference between consecutive iterates drops
    below ``tol``. With ``full_output=True`` returns ``(y, info)`` where
    ``info`` has keys ``iterations`` and ``converged``.
    """
    apply_A, apply_AT, symmetric, n = _operators(g)
    x = np.asarray(x, dtype=float).ravel()
    if x.size != n:
        raise ValueError(f"vector must have length {n}")
    beta = np.linalg.norm(x)
    if beta == 0:
        raise ValueError("x must be nonzero")
    m_max = max(1, min(int(m_max), n))
    proc = _Arnoldi(apply_AT if transposed else apply_A, x, m_max, reorth=reorth, symmetric=symmetric)
    prev = None
    converged = False
    while proc.active:
        proc.step()
        k = proc.m
        y = beta * expm(proc.H[:k, :k])[:, 0]
        if proc.breakdown or k == n:
            converged = True
        elif prev is not None:
            inc = float(np.linalg.norm(y - _pad(prev[None, :], (1, k))[0]))
            if inc <= max(tol, _ROUNDOFF_FLOOR * float(np.linalg.norm(y))):
                converged = True
        if converged:
            break
        prev = y
    if not converged:
        warnings.warn(
            f"Krylov exp action reached m_max={m_max} without meeting tol={tol:g}",
            KrylovConvergenceWarning,
            stacklevel=2,
        )
    result = proc.V[:, : proc.m] @ y
    if full_output:
        return result, {"iterations": proc.m, "converged": converged}
    return result
