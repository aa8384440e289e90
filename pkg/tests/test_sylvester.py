import time

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sylvinit.core.errors import ParameterError, ShapeError
from sylvinit.core.matcore import sym_eig
from sylvinit.core.sylvester import (
    SylvesterOperands,
    build_operands,
    objective,
    objective_gradient,
    residual,
    solve,
)


def _instance(rng, d_o=4, d_i=6, n=20, lam=10.0):
    x = rng.standard_normal((d_i, n))
    s = rng.standard_normal((d_o, n))
    return x, s, build_operands(x, s, lam)


def test_build_operands_identity_case():
    ops = build_operands(np.eye(2), np.eye(2), 1.0)
    assert_array_equal(ops.a, np.eye(2))
    assert_array_equal(ops.b, np.eye(2))
    assert_array_equal(ops.c, 2 * np.eye(2))


def test_build_operands_shapes_and_psd(rng):
    x, s, ops = _instance(rng, d_o=2, d_i=3, n=6)
    assert (ops.a.shape, ops.b.shape, ops.c.shape) == ((2, 2), (3, 3), (2, 3))
    assert (ops.d_o, ops.d_i) == (2, 3)
    for m in (ops.a, ops.b):
        assert sym_eig(m).eigenvalues.min() >= -1e-10 * np.trace(m)


def test_build_operands_errors():
    with pytest.raises(ShapeError):
        build_operands(np.zeros((3, 4)), np.zeros((2, 5)), 1.0)
    with pytest.raises(ParameterError):
        build_operands(np.zeros((3, 4)), np.zeros((2, 4)), 0.0)
    with pytest.raises(ParameterError):
        build_operands(np.full((3, 4), np.nan), np.zeros((2, 4)), 1.0)
    with pytest.raises(ShapeError):
        build_operands(np.zeros(4), np.zeros((2, 4)), 1.0)
    with pytest.raises(ShapeError):
        SylvesterOperands(a=np.eye(3), b=np.eye(2), c=np.zeros((2, 2)), lam=1.0)


def test_objective_small_cases(rng):
    assert objective(np.eye(3), np.eye(3), np.eye(3), 7.0) == 0.0
    assert objective(np.zeros((2, 2)), np.eye(2), np.zeros((2, 2)), 5.0) == pytest.approx(2.0)

    w, x, s = rng.standard_normal((2, 3)), rng.standard_normal((3, 5)), rng.standard_normal((2, 5))
    lam = 0.7
    ref = 0.0
    for i in range(3):
        for j in range(5):
            ref += (x[i, j] - sum(w[k, i] * s[k, j] for k in range(2))) ** 2
    for k in range(2):
        for j in range(5):
            ref += lam * (sum(w[k, i] * x[i, j] for i in range(3)) - s[k, j]) ** 2
    assert objective(w, x, s, lam) == pytest.approx(ref, rel=1e-10)

    with pytest.raises(ShapeError):
        objective(np.zeros((3, 3)), x, s, lam)


def test_solve_diagonal_cases():
    ops = SylvesterOperands(a=np.eye(2), b=np.eye(2), c=2 * np.eye(2), lam=1.0)
    w, diag = solve(ops)
    assert_allclose(w, np.eye(2), atol=1e-14)
    assert diag.clipped_denominators == 0

    ops = SylvesterOperands(
        a=np.diag([1.0, 2.0]), b=np.array([[3.0]]), c=np.array([[4.0], [5.0]]), lam=1.0
    )
    w, _ = solve(ops)
    assert_allclose(w, [[1.0], [1.0]], atol=1e-14)


@pytest.mark.parametrize("lam", [0.01, 1.0, 10.0])
def test_solve_residual_and_stationarity(rng, lam):
    x, s, ops = _instance(rng, lam=lam)
    w, diag = solve(ops)
    scale = max(np.linalg.norm(ops.c), 1.0)
    assert diag.residual <= 1e-8
    assert diag.residual == pytest.approx(residual(ops, w))
    assert np.linalg.norm(objective_gradient(w, x, s, lam)) <= 1e-7 * scale


def test_objective_gradient_matches_finite_differences(rng):
    x, s = rng.standard_normal((6, 10)), rng.standard_normal((4, 10))
    w = rng.standard_normal((4, 6))
    lam, h = 2.5, 1e-6
    grad = objective_gradient(w, x, s, lam)
    fd = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        e = np.zeros_like(w)
        e[idx] = h
        fd[idx] = (objective(w + e, x, s, lam) - objective(w - e, x, s, lam)) / (2 * h)
    assert np.linalg.norm(fd - grad) <= 1e-5 * np.linalg.norm(grad)


def test_solution_beats_perturbations(rng):
    x, s, ops = _instance(rng)
    w, _ = solve(ops)
    best = objective(w, x, s, ops.lam)
    for _ in range(100):
        delta = rng.standard_normal(w.shape)
        delta *= 1e-3 / np.linalg.norm(delta)
        assert best <= objective(w + delta, x, s, ops.lam)


def test_orthogonal_equivariance(rng):
    _, _, ops = _instance(rng)
    q, _ = np.linalg.qr(rng.standard_normal((ops.d_o, ops.d_o)))
    w, _ = solve(ops)
    rotated = SylvesterOperands(a=q @ ops.a @ q.T, b=ops.b, c=q @ ops.c, lam=ops.lam)
    wq, _ = solve(rotated)
    assert_allclose(wq, q @ w, atol=1e-9)


def test_solve_matches_gradient_descent(rng):
    x, s, ops = _instance(rng, d_o=3, d_i=4, n=12, lam=1.0)
    w_star, _ = solve(ops)

    # step 1/L for the quadratic's Lipschitz constant L = 2 (l_max + m_max)
    lipschitz = 2 * (sym_eig(ops.a).eigenvalues[0] + sym_eig(ops.b).eigenvalues[0])
    w = np.zeros_like(w_star)
    for _ in range(200_000):
        g = objective_gradient(w, x, s, ops.lam)
        w -= g / lipschitz
        if np.linalg.norm(g) < 1e-10:
            break
    assert np.linalg.norm(w - w_star) <= 1e-4


def test_degenerate_operands_are_clipped(rng):
    x = rng.standard_normal((6, 3))  # rank 3 < d_i
    s = np.zeros((2, 3))
    ops = build_operands(x, s, 1.0)
    w, diag = solve(ops)
    assert diag.clipped_denominators > 0
    assert np.all(np.isfinite(w))
    assert_allclose(w, 0.0, atol=1e-12)


def test_solve_rejects_bad_eps(rng):
    _, _, ops = _instance(rng)
    with pytest.raises(ParameterError):
        solve(ops, eps=0.0)
    _, diag = solve(ops, eps=1e-3)
    assert diag.eps == 1e-3


def test_solver_time_does_not_grow_with_samples(rng):
    def solve_seconds(n):
        _, _, ops = _instance(rng, d_o=16, d_i=24, n=n)
        best = np.inf
        for _ in range(3):
            start = time.perf_counter()
            solve(ops)
            best = min(best, time.perf_counter() - start)
        return best

    small, large = solve_seconds(200), solve_seconds(800)
    assert large <= 2.0 * small + 0.05
