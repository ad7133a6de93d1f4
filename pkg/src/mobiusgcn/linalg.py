"""Dense real/complex matrix helpers and a deterministic cyclic Jacobi eigensolver.

Real matrices are plain 2-D ``float64`` numpy arrays. Complex quantities are kept
as split real/imaginary arrays (:class:`ComplexMatrix`) so that every complex
product lowers to real products.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
SIGN_EPS = 1e-12
POLE_EPS = 1e-12
SYMMETRY_TOL = 1e-12


class ShapeError(ValueError):
    pass


class SymmetryError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class PoleError(ZeroDivisionError):
    """Raised when a Möbius denominator vanishes; ``index`` is the eigenvalue slot."""

    def __init__(self, index: int, magnitude: float):
        super().__init__(f"Möbius pole at eigenvalue index {index} (|den|={magnitude:.3e})")
        self.index = index
        self.magnitude = magnitude


@dataclass(frozen=True)
class ComplexMatrix:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.asarray(self.re, dtype=np.float64)
        im = np.asarray(self.im, dtype=np.float64)
        if re.shape != im.shape:
            raise ShapeError(f"real part {re.shape} and imaginary part {im.shape} differ")
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @classmethod
    def from_complex(cls, z) -> "ComplexMatrix":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())

    @classmethod
    def identity(cls, n: int) -> "ComplexMatrix":
        return cls(np.eye(n), np.zeros((n, n)))

    @property
    def shape(self):
        return self.re.shape

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # eigenvector i is column i


def complex_matmul(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """(A + iB)(x + iy) = (Ax - By) + i(Bx + Ay), four real products."""
    if a.re.ndim != 2 or b.re.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    re = a.re @ b.re - a.im @ b.im
    im = a.im @ b.re + a.re @ b.im
    return ComplexMatrix(re, im)


def complex_diag_solve_apply(num: ComplexMatrix, den: ComplexMatrix) -> ComplexMatrix:
    """Entrywise ``num / den`` for diagonals stored as 1-D split arrays."""
    if num.shape != den.shape:
        raise ShapeError(f"diagonal lengths differ: {num.shape} vs {den.shape}")
    mag2 = den.re**2 + den.im**2
    mag = np.sqrt(mag2)
    bad = np.flatnonzero(mag <= POLE_EPS)
    if bad.size:
        i = int(bad[0])
        raise PoleError(i, float(mag[i]))
    re = (num.re * den.re + num.im * den.im) / mag2
    im = (num.im * den.re - num.re * den.im) / mag2
    return ComplexMatrix(re, im)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        significant = np.flatnonzero(np.abs(col) > SIGN_EPS)
        if significant.size and col[significant[0]] < 0:
            vecs[:, j] = -col
    return vecs


def sym_eigendecompose(m, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> EigenResult:
    """Eigen-decompose a real symmetric matrix with cyclic Jacobi rotations.

    Pivots are visited in fixed row-major order (p < q), so the output is a pure
    function of the input bytes. Sweeps stop once the off-diagonal Frobenius
    norm falls below ``tol`` times the Frobenius norm of the input.
    Eigenvalues come back ascending, eigenvectors as columns with the first
    significant component positive.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > SYMMETRY_TOL:
        raise SymmetryError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)

    off_mask = ~np.eye(n, dtype=bool)

    def off_norm():
        return np.sqrt(np.sum(a[off_mask] ** 2))

    converged = scale == 0.0 or off_norm() <= tol * scale
    sweeps = 0
    while not converged:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) rotation
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
        converged = off_norm() <= tol * scale

    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    vecs = _fix_signs(v[:, order].copy())
    return EigenResult(vals, vecs)


def max_abs(x) -> float:
    x = np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0
