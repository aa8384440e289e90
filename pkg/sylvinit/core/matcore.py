from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import numpy.typing as npt
import structlog
from numba import njit

from sylvinit.config.constants import (
    JACOBI_MAX_SWEEPS,
    JACOBI_THRESHOLD,
    JACOBI_THRESHOLD_SWEEPS,
    JACOBI_TOL,
    SIGN_TOL,
)
from sylvinit.core.errors import ParameterError, ShapeError

log = structlog.get_logger(__name__)

Matrix = npt.NDArray[np.float64]


@dataclass(frozen=True, slots=True)
class SymEig:
    """
    Spectral factorization of a symmetric matrix.

    eigenvalues are sorted descending; column k of eigenvectors pairs with
    eigenvalues[k] and has its first nonzero component >= 0.
    """
    eigenvalues: npt.NDArray[np.float64]
    eigenvectors: Matrix
    sweeps: int = 0

    def reconstruct(
        self, transform: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ) -> Matrix:
        """
        V diag(f(eigenvalues)) Vᵀ; f is the identity when transform is None.
        """
        v = self.eigenvectors
        w = self.eigenvalues if transform is None else transform(self.eigenvalues)
        return (v * w) @ v.T


def as_matrix(data) -> Matrix:
    """
    Coerce to a 2-D float64 array and reject NaN/Inf.
    """
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ParameterError("matrix has non-finite entries")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def gram(x: Matrix) -> Matrix:
    """
    X Xᵀ, symmetrized so the result is exactly symmetric.
    """
    g = x @ x.T
    return 0.5 * (g + g.T)


def frobenius_norm(m: Matrix) -> float:
    return float(np.linalg.norm(m))


@njit(cache=True)
def _off_norm(a):
    n = a.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += a[i, j] * a[i, j]
    return np.sqrt(total)


@njit(cache=True)
def _jacobi_sweeps(a, vt, tol, max_sweeps, threshold, threshold_sweeps):
    """
    Row-cyclic Jacobi on a (in place, symmetric), accumulating rotations into
    the rows of vt. Returns (sweeps, final off-diagonal norm).

    An entry is skipped when it is at most tol / n, or during the first
    threshold_sweeps sweeps when it is at most threshold * off / n².
    """
    n = a.shape[0]
    floor_tol = tol / n if n > 0 else 0.0
    off = _off_norm(a)
    sweeps = 0
    while sweeps < max_sweeps and off > tol:
        floor = floor_tol
        if sweeps < threshold_sweeps:
            floor = max(floor, threshold * off / (n * n))
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= floor:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp = a[p, k]
                    akq = a[q, k]
                    nkp = c * akp - s * akq
                    nkq = s * akp + c * akq
                    a[p, k] = nkp
                    a[k, p] = nkp
                    a[q, k] = nkq
                    a[k, q] = nkq
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0

                for k in range(n):
                    vp = vt[p, k]
                    vq = vt[q, k]
                    vt[p, k] = c * vp - s * vq
                    vt[q, k] = s * vp + c * vq
        sweeps += 1
        off = _off_norm(a)
    return sweeps, off


# compile on import so the first timed call does not pay for it
_jacobi_sweeps(np.eye(2), np.eye(2), 0.0, 1, 0.0, 0)


def sym_eig(m: Matrix) -> SymEig:
    """
    Cyclic Jacobi eigendecomposition of (m + mᵀ)/2.

    Each sweep visits every (p, q) pair with p < q once, row by row. The first
    JACOBI_THRESHOLD_SWEEPS sweeps skip entries below JACOBI_THRESHOLD * off / n².
    Stops when the off-diagonal norm drops to JACOBI_TOL * ||m||_F or after
    JACOBI_MAX_SWEEPS sweeps.
    """
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"sym_eig needs a square matrix, got {m.shape}")
    n = m.shape[0]
    a = np.ascontiguousarray(0.5 * (m + m.T))
    vt = np.eye(n)

    tol = JACOBI_TOL * frobenius_norm(a)
    sweeps, off = _jacobi_sweeps(
        a, vt, tol, JACOBI_MAX_SWEEPS, JACOBI_THRESHOLD, JACOBI_THRESHOLD_SWEEPS
    )
    if off > tol:
        log.warning("jacobi did not converge", n=n, sweeps=sweeps, off_norm=off, tol=tol)

    w = np.diag(a).copy()
    idx = np.argsort(-w, kind="stable")
    w = w[idx]
    v = vt.T[:, idx]

    # sign convention: first non-negligible component of each vector is >= 0
    for k in range(n):
        col = v[:, k]
        nz = np.flatnonzero(np.abs(col) > SIGN_TOL)
        if nz.size and col[nz[0]] < 0:
            v[:, k] = -col

    return SymEig(eigenvalues=w, eigenvectors=v, sweeps=int(sweeps))
