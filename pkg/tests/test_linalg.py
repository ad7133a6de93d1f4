import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_symmetric
from mobiusgcn.linalg import (
    ComplexMatrix,
    ConvergenceError,
    PoleError,
    ShapeError,
    SymmetryError,
    complex_diag_solve_apply,
    complex_matmul,
    max_abs,
    sym_eigendecompose,
)


def naive_complex_matmul(a, b):
    a, b = a.to_complex(), b.to_complex()
    out = np.zeros((a.shape[0], b.shape[1]), dtype=complex)
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_identity_eigensystem():
    res = sym_eigendecompose(np.eye(3))
    np.testing.assert_array_equal(res.eigenvalues, [1, 1, 1])
    np.testing.assert_array_equal(res.eigenvectors, np.eye(3))


def test_two_node_laplacian_eigensystem():
    m = np.array([[1.0, -1.0], [-1.0, 1.0]])
    res = sym_eigendecompose(m)
    np.testing.assert_allclose(res.eigenvalues, [0, 2], atol=1e-14)
    r = 1 / np.sqrt(2)
    np.testing.assert_allclose(res.eigenvectors, [[r, r], [r, -r]], atol=1e-14)
    u, lam = res.eigenvectors, res.eigenvalues
    assert max_abs(u @ np.diag(lam) @ u.T - m) < 1e-12
    for k in range(2):
        np.testing.assert_allclose(m @ u[:, k], lam[k] * u[:, k], atol=1e-14)


def test_triangle_normalized_laplacian_against_characteristic_polynomial():
    lap = np.eye(3) - (np.ones((3, 3)) - np.eye(3)) / 2
    roots = np.sort(np.roots(np.poly(lap)).real)
    np.testing.assert_allclose(roots, [0, 1.5, 1.5], atol=1e-7)
    res = sym_eigendecompose(lap)
    np.testing.assert_allclose(res.eigenvalues, roots, atol=1e-7)
    np.testing.assert_allclose(res.eigenvalues, [0, 1.5, 1.5], atol=1e-12)


def test_random_symmetric_invariants():
    rng = np.random.default_rng(0)
    for trial in range(100):
        n = int(rng.integers(1, 21))
        m = random_symmetric(rng, n)
        res = sym_eigendecompose(m)
        u, lam = res.eigenvectors, res.eigenvalues
        assert np.all(np.diff(lam) >= 0)
        assert max_abs(u.T @ u - np.eye(n)) < 1e-8
        assert max_abs(u @ np.diag(lam) @ u.T - m) < 1e-8
        for k in range(n):
            col = u[:, k]
            first = col[np.abs(col) > 1e-12][0]
            assert first > 0


def test_bytewise_deterministic():
    m = random_symmetric(np.random.default_rng(3), 12)
    a, b = sym_eigendecompose(m), sym_eigendecompose(m.copy())
    assert a.eigenvalues.tobytes() == b.eigenvalues.tobytes()
    assert a.eigenvectors.tobytes() == b.eigenvectors.tobytes()


def test_eigen_errors():
    with pytest.raises(ShapeError):
        sym_eigendecompose(np.zeros((2, 3)))
    with pytest.raises(SymmetryError):
        sym_eigendecompose(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ConvergenceError):
        sym_eigendecompose(random_symmetric(np.random.default_rng(1), 8), max_sweeps=1)


def test_complex_matmul_scalar():
    out = complex_matmul(ComplexMatrix([[1.0]], [[2.0]]), ComplexMatrix([[3.0]], [[4.0]]))
    assert out.re[0, 0] == -5 and out.im[0, 0] == 10


def test_complex_matmul_identity():
    rng = np.random.default_rng(2)
    a = ComplexMatrix(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
    out = complex_matmul(a, ComplexMatrix.identity(3))
    np.testing.assert_array_equal(out.re, a.re)
    np.testing.assert_array_equal(out.im, a.im)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_complex_matmul_matches_triple_loop(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a = ComplexMatrix(rng.uniform(-2, 2, (n, k)), rng.uniform(-2, 2, (n, k)))
    b = ComplexMatrix(rng.uniform(-2, 2, (k, m)), rng.uniform(-2, 2, (k, m)))
    assert max_abs(complex_matmul(a, b).to_complex() - naive_complex_matmul(a, b)) < 1e-12


def test_complex_matmul_shape_error():
    with pytest.raises(ShapeError):
        complex_matmul(ComplexMatrix.identity(2), ComplexMatrix.identity(3))


def test_diag_solve():
    out = complex_diag_solve_apply(ComplexMatrix([2.0], [0.0]), ComplexMatrix([1.0], [0.0]))
    assert out.re[0] == 2 and out.im[0] == 0
    out = complex_diag_solve_apply(ComplexMatrix([1.0], [1.0]), ComplexMatrix([1.0], [-1.0]))
    np.testing.assert_allclose([out.re[0], out.im[0]], [0, 1], atol=1e-15)


def test_diag_solve_pole():
    with pytest.raises(PoleError) as info:
        complex_diag_solve_apply(ComplexMatrix([1.0, 1.0], [0.0, 0.0]), ComplexMatrix([1.0, 1e-15], [0.0, 0.0]))
    assert info.value.index == 1
