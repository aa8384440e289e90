from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import structlog

from sylvinit.config.constants import EPS_SCALE
from sylvinit.core.errors import ParameterError, ShapeError
from sylvinit.core.matcore import Matrix, as_matrix, frobenius_norm, gram, matmul, sym_eig

log = structlog.get_logger(__name__)


@dataclass(frozen=True, slots=True)
class SylvesterOperands:
    """
    A W + W B = C with A = S Sᵀ, B = lam X Xᵀ, C = (1 + lam) S Xᵀ.
    """
    a: Matrix
    b: Matrix
    c: Matrix
    lam: float

    def __post_init__(self):
        if self.a.shape != (self.c.shape[0], self.c.shape[0]):
            raise ShapeError(f"A {self.a.shape} does not match C {self.c.shape}")
        if self.b.shape != (self.c.shape[1], self.c.shape[1]):
            raise ShapeError(f"B {self.b.shape} does not match C {self.c.shape}")

    @property
    def d_o(self) -> int:
        return self.c.shape[0]

    @property
    def d_i(self) -> int:
        return self.c.shape[1]


@dataclass(frozen=True, slots=True)
class SolveDiagnostics:
    residual: float
    clipped_denominators: int
    wall_time: float
    eps: float
    min_denominator: float


def build_operands(x: Matrix, s: Matrix, lam: float) -> SylvesterOperands:
    x, s = as_matrix(x), as_matrix(s)
    if x.ndim != 2 or s.ndim != 2 or x.shape[1] != s.shape[1]:
        raise ShapeError(f"activations {x.shape} and code {s.shape} need the same column count")
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    return SylvesterOperands(
        a=gram(s),
        b=lam * gram(x),
        c=(1.0 + lam) * matmul(s, x.T),
        lam=float(lam),
    )


def _check_wxs(w: Matrix, x: Matrix, s: Matrix) -> None:
    if w.shape != (s.shape[0], x.shape[0]) or x.shape[1] != s.shape[1]:
        raise ShapeError(f"inconsistent shapes w {w.shape}, x {x.shape}, s {s.shape}")


def objective(w: Matrix, x: Matrix, s: Matrix, lam: float) -> float:
    """
    Decoding loss ||X - WᵀS||² plus lam times encoding loss ||WX - S||².
    """
    _check_wxs(w, x, s)
    decode = x - w.T @ s
    encode = w @ x - s
    return float(np.sum(decode * decode) + lam * np.sum(encode * encode))


def objective_gradient(w: Matrix, x: Matrix, s: Matrix, lam: float) -> Matrix:
    _check_wxs(w, x, s)
    return 2.0 * (s @ s.T @ w + lam * w @ x @ x.T - (1.0 + lam) * s @ x.T)


def residual(ops: SylvesterOperands, w: Matrix) -> float:
    r = ops.a @ w + w @ ops.b - ops.c
    return frobenius_norm(r) / max(frobenius_norm(ops.c), 1.0)


def solve(ops: SylvesterOperands, eps: Optional[float] = None) -> Tuple[Matrix, SolveDiagnostics]:
    """
    Spectral solve for symmetric PSD A and B.

    With A = U diag(l) Uᵀ and B = V diag(m) Vᵀ the equation decouples into
    W~_ij = (Uᵀ C V)_ij / (l_i + m_j), W = U W~ Vᵀ. Denominators under eps are
    clipped to eps. eps defaults to EPS_SCALE * (l_max + m_max).
    """
    if eps is not None and not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")

    start = time.perf_counter()
    ea = sym_eig(ops.a)
    eb = sym_eig(ops.b)

    denom = ea.eigenvalues[:, None] + eb.eigenvalues[None, :]
    if eps is None:
        top = (ea.eigenvalues[0] if ea.eigenvalues.size else 0.0) + (
            eb.eigenvalues[0] if eb.eigenvalues.size else 0.0
        )
        eps = max(EPS_SCALE * top, np.finfo(np.float64).tiny)

    small = denom < eps
    clipped = int(np.count_nonzero(small))
    min_denom = float(denom.min()) if denom.size else 0.0
    denom = np.where(small, eps, denom)

    u, v = ea.eigenvectors, eb.eigenvectors
    w = u @ ((u.T @ ops.c @ v) / denom) @ v.T
    wall = time.perf_counter() - start

    res = residual(ops, w)
    if clipped:
        log.info("clipped denominators", count=clipped, eps=eps, min_denominator=min_denom)
    log.debug("sylvester solved", d_o=ops.d_o, d_i=ops.d_i, residual=res, seconds=wall)

    return w, SolveDiagnostics(
        residual=res,
        clipped_denominators=clipped,
        wall_time=wall,
        eps=float(eps),
        min_denominator=min_denom,
    )
