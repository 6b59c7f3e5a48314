import math

import numpy as np
import pytest

from netsens import dense


def test_expm_zero_and_diagonal():
    np.testing.assert_array_equal(dense.expm(np.zeros((3, 3))), np.eye(3))
    F = dense.expm(np.diag([1.0, -1.0]))
    np.testing.assert_allclose(F, np.diag([math.e, 1 / math.e]), rtol=1e-14, atol=0)


def test_expm_swap_matrix_closed_form():
    F = dense.expm(np.array([[0.0, 1], [1, 0]]))
    ch, sh = math.cosh(1), math.sinh(1)
    np.testing.assert_allclose(F, [[ch, sh], [sh, ch]], rtol=1e-13)


def test_expm_rejects_non_square():
    with pytest.raises(ValueError):
        dense.expm(np.zeros((2, 3)))


def test_expm_inverse_and_shift():
    rng = np.random.default_rng(0)
    for _ in range(10):
        A = rng.standard_normal((6, 6))
        A *= rng.uniform(0.1, 10) / np.linalg.norm(A, 2)
        F = dense.expm(A)
        np.testing.assert_allclose(F @ dense.expm(-A), np.eye(6), atol=1e-12 * np.linalg.cond(F))
        s = rng.uniform(-2, 2)
        np.testing.assert_allclose(dense.expm(A + s * np.eye(6)), math.exp(s) * F, rtol=1e-12, atol=1e-12 * np.abs(F).max())


def test_block_oracle_at_zero_is_identity_map():
    E = np.arange(9.0).reshape(3, 3)
    np.testing.assert_allclose(dense.block_frechet_oracle(np.zeros((3, 3)), E), E, atol=1e-15)


def test_block_oracle_lower_block_is_zero():
    rng = np.random.default_rng(1)
    A, E = rng.standard_normal((5, 5)), rng.standard_normal((5, 5))
    F = dense.expm(np.block([[A, E], [np.zeros((5, 5)), A]]))
    assert np.abs(F[5:, :5]).max() <= 1e-14 * np.abs(F).max()


def test_block_oracle_transposition_for_symmetric_a():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((6, 6))
    A = A + A.T
    L1 = dense.block_frechet_oracle(A, dense.edge_direction(6, 1, 4))
    L2 = dense.block_frechet_oracle(A, dense.edge_direction(6, 4, 1))
    np.testing.assert_allclose(L1.T, L2, rtol=1e-12, atol=1e-13)


def test_block_oracle_matches_central_difference():
    rng = np.random.default_rng(3)
    A, E = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    h = 1e-5
    fd = (dense.expm(A + h * E) - dense.expm(A - h * E)) / (2 * h)
    L = dense.block_frechet_oracle(A, E)
    assert np.linalg.norm(L - fd) <= 1e-6 * np.linalg.norm(L)


def test_block_oracle_size_mismatch():
    with pytest.raises(ValueError):
        dense.block_frechet_oracle(np.zeros((2, 2)), np.zeros((3, 3)))


def test_thin_svd_examples():
    _, s, _ = dense.thin_svd(np.eye(3))
    np.testing.assert_allclose(s, [1, 1, 1])
    u = np.array([2.0, 0, 0])
    v = np.array([0, 3.0, 0])
    _, s, _ = dense.thin_svd(np.outer(u, v))
    np.testing.assert_allclose(s, [6, 0, 0], atol=1e-15)


@pytest.mark.parametrize("shape", [(5, 5), (7, 3), (3, 7)])
def test_thin_svd_reconstruction(shape):
    A = np.random.default_rng(4).standard_normal(shape)
    U, s, V = dense.thin_svd(A)
    k = min(shape)
    assert U.shape == (shape[0], k) and V.shape == (shape[1], k)
    np.testing.assert_allclose(U.T @ U, np.eye(k), atol=1e-14)
    np.testing.assert_allclose(V.T @ V, np.eye(k), atol=1e-14)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
    assert np.linalg.norm(U * s @ V.T - A) <= 1e-13 * np.linalg.norm(A)


def test_direction_terms():
    A = np.array([[0, 2.0, 0], [2, 0, 1], [0, 1, 0]])
    E = dense.node_direction(A, 1)
    np.testing.assert_array_equal(E, -np.array([[0, 2, 0], [2, 0, 1], [0, 1, 0]]))
    assert dense.edge_direction(3, 0, 2)[0, 2] == 1 and dense.edge_direction(3, 0, 2).sum() == 1
