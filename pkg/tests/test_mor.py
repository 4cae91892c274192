"""Riccati solving, balanced truncation, projection, state-space reduction."""

import numpy as np
import pytest
import scipy.linalg

from stochsyn.errors import EmptyResult, NotStabilizable, RankDeficient
from stochsyn.geometry import Polytope
from stochsyn.models import LinearModel
from stochsyn.mor import (
    balanced_gramians, compute_projection, dare_residual, lift_initial_state,
    model_reduction, reduce_x, solve_dare,
)


def test_dare_deadbeat():
    X, F = solve_dare(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2))
    np.testing.assert_allclose(X, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(F, np.zeros((2, 2)), atol=1e-12)


def test_dare_scalar_fixed_point():
    A = np.array([[0.9]])
    B = np.array([[0.7]])
    X, F = solve_dare(A, B, np.eye(1), np.eye(1))
    # Independent scalar fixed-point oracle.
    x = 1.0
    for _ in range(10_000):
        x = 0.81 * x - (0.63 * x) ** 2 / (1 + 0.49 * x) + 1.0
    assert X[0, 0] == pytest.approx(x, abs=1e-9)
    res = dare_residual(A, B, np.eye(1), np.eye(1), X)
    assert np.max(np.abs(res)) <= 1e-9
    assert abs(0.9 + 0.7 * F[0, 0]) < 1.0


def test_dare_matches_scipy():
    rng = np.random.default_rng(5)
    for _ in range(25):
        n, m = 3, 2
        A = rng.uniform(-1, 1, size=(n, n))
        B = rng.uniform(-1, 1, size=(n, m))
        Qc = np.eye(n)
        Rc = np.eye(m) * rng.uniform(0.5, 2.0)
        try:
            X, F = solve_dare(A, B, Qc, Rc)
        except NotStabilizable:
            continue
        X_ref = scipy.linalg.solve_discrete_are(A, B, Qc, Rc)
        np.testing.assert_allclose(X, X_ref, rtol=1e-7, atol=1e-8)
        assert np.max(np.abs(np.linalg.eigvals(A + B @ F))) < 1.0


def test_dare_unstabilizable():
    with pytest.raises(NotStabilizable):
        solve_dare(np.array([[2.0]]), np.array([[0.0]]), np.eye(1), np.eye(1))


def _random_stable_model(rng, n=4, m=2, p=1):
    A = rng.uniform(-1, 1, size=(n, n))
    A *= 0.8 / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
    B = rng.uniform(-1, 1, size=(n, m))
    C = rng.uniform(-1, 1, size=(p, n))
    return LinearModel(A, B, C, B_w=0.1 * np.eye(n))


def test_full_order_reduction_preserves_transfer():
    rng = np.random.default_rng(9)
    m = _random_stable_model(rng)
    pair = model_reduction(m, dimr=4, f=1.0)
    # Same transfer map: Markov parameters agree.
    for k in range(6):
        full = m.C @ np.linalg.matrix_power(m.A, k) @ m.B
        red = pair.reduced.C @ np.linalg.matrix_power(pair.reduced.A, k) \
            @ pair.reduced.B
        np.testing.assert_allclose(full, red, atol=1e-8)


def test_balanced_gramians_equal_diagonal():
    rng = np.random.default_rng(19)
    m = _random_stable_model(rng)
    pair = model_reduction(m, dimr=2, f=1.0)
    Wc_b, Wo_b = balanced_gramians(pair)
    k = int(np.sum(pair.hankel > 1e-10))
    np.testing.assert_allclose(Wc_b[:k, :k], np.diag(pair.hankel[:k]),
                               rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(Wo_b[:k, :k], np.diag(pair.hankel[:k]),
                               rtol=1e-6, atol=1e-8)


def test_truncation_drops_weak_mode():
    # Decoupled system: a strong mode and a nearly-dead mode.
    A = np.diag([0.9, 1e-6])
    B = np.array([[1.0], [1e-6]])
    C = np.array([[1.0, 1e-6]])
    m = LinearModel(A, B, C, B_w=np.zeros((2, 1)))
    pair = model_reduction(m, dimr=1, f=1.0)
    assert pair.hankel[0] / max(pair.hankel[1], 1e-300) > 1e4
    assert pair.reduced.n == 1


def test_rank_deficient_detected():
    A = np.diag([0.5, 0.5])
    B = np.array([[1.0], [0.0]])
    C = np.array([[1.0, 0.0]])
    m = LinearModel(A, B, C, B_w=np.zeros((2, 1)))
    with pytest.raises(RankDeficient):
        model_reduction(m, dimr=2, f=1.0)


def test_projection_full_order():
    rng = np.random.default_rng(29)
    m = _random_stable_model(rng)
    pair = compute_projection(model_reduction(m, dimr=4, f=1.0))
    # Exact embedding: the lifted reduced dynamics match the full dynamics
    # through the input channel, and outputs lift exactly.
    residual = m.A @ pair.P - pair.P @ pair.reduced.A - m.B @ pair.Q
    np.testing.assert_allclose(residual, np.zeros_like(residual), atol=1e-8)
    np.testing.assert_allclose(m.C @ pair.P, pair.reduced.C, atol=1e-8)
    assert np.linalg.matrix_rank(pair.P) == 4


def test_projection_block_diagonal():
    # Decoupled blocks: truncating the weakly observed block leaves zero
    # least-squares residual.
    A = np.diag([0.8, 0.1])
    B = np.array([[1.0], [0.0]])
    C = np.array([[2.0, 0.0]])
    m = LinearModel(A, B, C, B_w=np.zeros((2, 1)))
    pair = compute_projection(model_reduction(m, dimr=1, f=1.0))
    residual = m.B @ pair.Q - (pair.P @ pair.reduced.A - m.A @ pair.P)
    np.testing.assert_allclose(residual, np.zeros_like(residual), atol=1e-9)
    np.testing.assert_allclose(m.C @ pair.P, pair.reduced.C, atol=1e-10)


def test_lift_initial_state_minimizes():
    rng = np.random.default_rng(31)
    m = _random_stable_model(rng)
    pair = compute_projection(model_reduction(m, dimr=2, f=1.0))
    x0 = rng.uniform(-1, 1, size=4)
    xr = lift_initial_state(pair, x0)
    base = np.linalg.norm(x0 - pair.P @ xr)
    for _ in range(200):
        trial = xr + rng.uniform(-0.1, 0.1, size=2)
        assert np.linalg.norm(x0 - pair.P @ trial) >= base - 1e-12


def test_reduce_x_identity_and_zero_dynamics():
    X = Polytope.box([-10], [10])
    U = Polytope.box([-1], [1])
    P1 = Polytope.box([-2], [2])
    m_zero = LinearModel([[0.0]], [[1.0]], [[1.0]], X=X, U=U)
    shrunk = reduce_x(m_zero, U, P1, iterations=1)
    lows, highs = shrunk.X.bounds
    np.testing.assert_allclose(lows, [-2])
    np.testing.assert_allclose(highs, [2])
    same = reduce_x(m_zero, U, P1, iterations=0)
    lows, highs = same.X.bounds  # k=0 leaves P1 untouched... bounding box of P1
    np.testing.assert_allclose([lows[0], highs[0]], [-2, 2])


def test_reduce_x_halving():
    X = Polytope.box([-10], [10])
    U = Polytope.box([0], [0])
    P1 = Polytope.box([-1], [1])
    m = LinearModel([[2.0]], [[0.0]], [[1.0]], X=X, U=U)
    shrunk = reduce_x(m, U, P1, iterations=2)
    lows, highs = shrunk.X.bounds
    np.testing.assert_allclose(lows, [-0.25])
    np.testing.assert_allclose(highs, [0.25])


def test_reduce_x_empty():
    X = Polytope.box([-10], [10])
    U = Polytope.box([0], [0])
    P1 = Polytope.box([1], [2])
    m = LinearModel([[0.0]], [[0.0]], [[1.0]], a=[-5.0], X=X, U=U)
    with pytest.raises(EmptyResult):
        reduce_x(m, U, P1, iterations=1)
