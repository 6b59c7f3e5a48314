"""Small dense kernels and brute-force Frechet derivative oracles.

The oracles here cost O(n^3) per call and exist to check the Krylov code
paths; production paths never call them on matrices above ``DENSE_CAP``.
"""

import numpy as np
import scipy.linalg as sla

DENSE_CAP = 512


def _square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {A.shape}")
    return A


def expm(A):
    """Matrix exponential by scaling and squaring with a Pade approximant."""
    A = _square(A)
    if A.size == 0:
        return A.copy()
    return sla.expm(A)


def block_frechet_oracle(A, E):
    """Frechet derivative ``L_exp(A, E)`` read off ``exp([[A, E], [0, A]])``."""
    A = _square(A)
    E = _square(E, "E")
    if A.shape != E.shape:
        raise ValueError(f"size mismatch: A is {A.shape}, E is {E.shape}")
    n = A.shape[0]
    Z = np.zeros_like(A)
    F = expm(np.block([[A, E], [Z, A]]))
    return F[:n, n:]


def thin_svd(A):
    """Thin SVD ``A = U @ diag(s) @ V.T`` with nonincreasing ``s``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return U, s, Vt.T


def unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def edge_direction(n, i, j):
    """The rank-one direction term ``e_i e_j^T``."""
    E = np.zeros((n, n))
    E[i, j] = 1.0
    return E


def node_direction(A, v):
    """Node-removal direction ``-(e_v a_{v:} + a_{:v} e_v^T)``."""
    A = _square(A)
    E = np.zeros_like(A)
    E[v, :] -= A[v, :]
    E[:, v] -= A[:, v]
    return E
