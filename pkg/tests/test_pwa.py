"""Piecewise-affine approximation and Taylor error bounds."""

import numpy as np
import pytest

from stochsyn.geometry import Polytope
from stochsyn.models import NonlinearModel, make_nonlinear
from stochsyn.pwa import bound_taylor_error, pwa_approximation


def _linear_as_nonlinear():
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    B = np.array([[0.5], [1.0]])

    def hess_bound(cell, U):
        return np.zeros(2)

    return NonlinearModel(
        f=lambda x, u: A @ x + B @ np.atleast_1d(u),
        jac_x=lambda x, u: A,
        jac_u=lambda x, u: B,
        n=2, m=1,
        X=Polytope.box([-2, -2], [2, 2]),
        U=Polytope.box([-1], [1]),
        hess_bound=hess_bound,
    )


def _scalar_square():
    # f(x) = x^2, no input influence.
    return NonlinearModel(
        f=lambda x, u: np.array([x[0] ** 2]),
        jac_x=lambda x, u: np.array([[2.0 * x[0]]]),
        jac_u=lambda x, u: np.array([[0.0]]),
        n=1, m=1,
        X=Polytope.box([0.0], [1.0]),
        U=Polytope.box([0.0], [0.0]),
        hess_bound=lambda cell, U: np.array([2.0]),
    )


def test_linear_dynamics_zero_error():
    m = _linear_as_nonlinear()
    pwa = pwa_approximation(m, [3, 3])
    assert pwa.n_modes == 9
    for mode in pwa.modes:
        lows, highs = mode.K.bounds
        assert np.all(np.abs(lows) <= 1e-12)
        assert np.all(np.abs(highs) <= 1e-12)
        np.testing.assert_allclose(mode.A, m.jac_x(None, None))


def test_scalar_square_lagrange_remainder():
    m = _scalar_square()
    K = bound_taylor_error(m, Polytope.box([0.0], [1.0]))
    lows, highs = K.bounds
    assert highs[0] == pytest.approx(0.25, abs=1e-12)
    assert lows[0] == pytest.approx(-0.25, abs=1e-12)
    # The bound is attained: residual at the cell edge is exactly 0.25.
    c = 0.5
    resid = 1.0 ** 2 - (c ** 2 + 2 * c * (1.0 - c))
    assert abs(resid) == pytest.approx(0.25, abs=1e-12)


def test_vanderpol_mode_count_and_jacobian_rows():
    vdp = make_nonlinear("vanderpol", {"tau": 0.1},
                         X=Polytope.box([-4, -4], [4, 4]),
                         U=Polytope.box([-1], [1]))
    pwa = pwa_approximation(vdp, [41, 41])
    assert pwa.n_modes == 1681
    # Second-state Jacobian row at each center: [(-1 - 2 x1 x2) tau, (1 - x1^2) tau]
    # on top of the identity from the Euler step.
    rng = np.random.default_rng(0)
    for k in rng.integers(0, 1681, size=20):
        mode = pwa.modes[int(k)]
        lows, highs = mode.cell.bounds
        c = 0.5 * (lows + highs)
        np.testing.assert_allclose(
            mode.A[1],
            [(-1 - 2 * c[0] * c[1]) * 0.1, 1 + (1 - c[0] ** 2) * 0.1],
            atol=1e-12)


def test_vanderpol_residuals_inside_error_set():
    vdp = make_nonlinear("vanderpol", {"tau": 0.1},
                         X=Polytope.box([-4, -4], [4, 4]),
                         U=Polytope.box([-1], [1]))
    pwa = pwa_approximation(vdp, [21, 21])
    rng = np.random.default_rng(77)
    mode_ids = rng.integers(0, pwa.n_modes, size=60)
    for k in mode_ids:
        mode = pwa.modes[int(k)]
        lows, highs = mode.cell.bounds
        xs = rng.uniform(lows, highs, size=(200, 2))
        us = rng.uniform(-1, 1, size=(200, 1))
        K_lo, K_hi = mode.K.bounds
        for x, u in zip(xs, us):
            resid = vdp.f(x, u) - (mode.A @ x + mode.B @ u + mode.a)
            assert np.all(resid <= K_hi + 1e-12)
            assert np.all(resid >= K_lo - 1e-12)


def test_refinement_halves_error():
    vdp = make_nonlinear("vanderpol", {"tau": 0.1},
                         X=Polytope.box([-4, -4], [4, 4]),
                         U=Polytope.box([-1], [1]))
    coarse = pwa_approximation(vdp, [10, 10])
    fine = pwa_approximation(vdp, [20, 20])

    def max_halfwidth(pwa):
        return max(mode.K.bounds[1].max() for mode in pwa.modes)

    assert max_halfwidth(fine) <= 0.5 * max_halfwidth(coarse) + 1e-12


def test_sampling_fallback_covers_residuals():
    m = NonlinearModel(
        f=lambda x, u: np.array([np.sin(x[0]) + 0.1 * u[0]]),
        jac_x=lambda x, u: np.array([[np.cos(x[0])]]),
        jac_u=lambda x, u: np.array([[0.1]]),
        n=1, m=1,
        X=Polytope.box([-1.0], [1.0]),
        U=Polytope.box([-1.0], [1.0]),
        hess_bound=None,
    )
    cell = Polytope.box([-1.0], [1.0])
    K = bound_taylor_error(m, cell, rng=np.random.default_rng(1))
    assert K.sampled_bound
    lows, highs = K.bounds
    rng = np.random.default_rng(2)
    A = m.jac_x(np.zeros(1), np.zeros(1))
    B = m.jac_u(np.zeros(1), np.zeros(1))
    a = m.f(np.zeros(1), np.zeros(1)) - A @ np.zeros(1) - B @ np.zeros(1)
    worst = 0.0
    for _ in range(1000):
        x = rng.uniform(-1, 1, size=1)
        u = rng.uniform(-1, 1, size=1)
        worst = max(worst, abs((m.f(x, u) - (A @ x + B @ u + a))[0]))
    assert highs[0] >= worst
