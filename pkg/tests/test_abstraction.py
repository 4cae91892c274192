"""Grids, abstract inputs, factored transition kernels, robust labels."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ndtr

from stochsyn.abstraction import (
    AbstractionTensor, Grid, build_abstraction, distribute_cells,
    grid_input_space, label_sets,
)
from stochsyn.errors import FractionOverflow
from stochsyn.geometry import LabeledPartition, Polytope
from stochsyn.models import LinearModel


def _lti_1d(A=0.5, sigma=1.0, lo=-5.0, hi=5.0):
    return LinearModel([[A]], [[1.0]], [[1.0]], B_w=[[sigma]],
                       X=Polytope.box([lo], [hi]), U=Polytope.box([-1], [1]))


def _carpark():
    X = Polytope.box([-10, -10], [10, 10])
    U = Polytope.box([-1, -1], [1, 1])
    p1 = Polytope.box([4, -4], [10, 0])
    p2 = Polytope.box([4, 0], [10, 4])
    lab = LabeledPartition([(p1, "p1"), (p2, "p2")], ("p1", "p2"))
    return LinearModel(0.9 * np.eye(2), 0.7 * np.eye(2), np.eye(2),
                       X=X, U=U, labeling=lab)


def test_grid_roundtrip():
    g = Grid([-10, -10], [10, 10], [200, 200])
    np.testing.assert_allclose(g.widths, [0.1, 0.1])
    for flat in [0, 123, 39999]:
        assert g.index(g.center(flat)) == flat
    assert g.index([11, 0]) == -1
    units = g.grid_units([g.center(777)])
    multi = np.unravel_index(777, g.counts)
    np.testing.assert_allclose(units[0], multi, atol=1e-12)


def test_distribute_cells():
    counts = distribute_cells(9_000_000, [1.0, 1.0])
    assert counts[0] == counts[1] == 3000
    counts = distribute_cells(200, [4.0, 1.0])
    assert counts.prod() == pytest.approx(200, rel=0.3)
    assert counts[0] > counts[1]


def test_grid_input_space_default():
    U = Polytope.box([-1, -1], [1, 1])
    inputs = grid_input_space(3, U)
    assert inputs.n_inputs == 9
    axis_vals = np.unique(inputs.points[:, 0])
    np.testing.assert_allclose(axis_vals, [-1, 0, 1])


def test_grid_input_space_single():
    U = Polytope.box([-1, 0.5], [1, 1.5])
    inputs = grid_input_space(1, U)
    np.testing.assert_allclose(inputs.points, [[0.0, 1.0]])


def test_grid_input_space_fractions():
    U = Polytope.box([-1], [1])
    inputs = grid_input_space(3, U, interface=1, fractions=(0.6, 0.175))
    lows, highs = inputs.actuation.bounds
    np.testing.assert_allclose([lows[0], highs[0]], [-0.6, 0.6])
    np.testing.assert_allclose(np.unique(inputs.points), [-0.6, 0.0, 0.6])
    fb_lo, fb_hi = inputs.feedback.bounds
    np.testing.assert_allclose([fb_lo[0], fb_hi[0]], [-0.175, 0.175])
    assert inputs.leftover_fraction == pytest.approx(0.225)
    with pytest.raises(FractionOverflow):
        grid_input_space(3, U, interface=1, fractions=(0.7, 0.5))


def test_cell_mass_at_center():
    # 1D, sigma=1, width 0.1, mean at a cell center: mass = 2 Phi(0.05) - 1.
    m = LinearModel([[0.0]], [[1.0]], [[1.0]], a=[0.05], B_w=[[1.0]],
                    X=Polytope.box([-5], [5]), U=Polytope.box([0], [0]))
    grid = Grid([-5], [5], [100])
    inputs = grid_input_space(1, m.U)
    tensor = AbstractionTensor(m, grid, inputs, tol=1e-9)
    # successor mean is 0.05 for every state: the center of cell 50
    idx, pr = tensor.transition_row(0, 0)
    target = grid.index([0.05])
    mass = pr[idx == target][0]
    expected = 2 * ndtr(0.05) - 1
    assert mass == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.03988, abs=5e-6)


def test_factored_matches_quadrature_1d():
    # l=20 toy: every kept entry agrees with direct Gaussian quadrature.
    m = _lti_1d(A=0.7, sigma=0.8, lo=-2.0, hi=2.0)
    grid = Grid([-2], [2], [20])
    inputs = grid_input_space(3, Polytope.box([-1], [1]))
    tensor = AbstractionTensor(m, grid, inputs, tol=1e-15)
    sigma = 0.8
    for state in [0, 5, 13, 19]:
        for u_idx in range(inputs.n_inputs):
            mu = 0.7 * grid.center(state)[0] + inputs.points[u_idx, 0]
            idx, pr = tensor.transition_row(state, u_idx)
            dense = np.zeros(20)
            for j in range(20):
                lo = grid.lows[0] + j * grid.widths[0]
                val, _ = quad(
                    lambda x: np.exp(-0.5 * ((x - mu) / sigma) ** 2)
                    / (sigma * np.sqrt(2 * np.pi)),
                    lo, lo + grid.widths[0], epsabs=1e-13, epsrel=1e-13)
                dense[j] = val
            row = np.zeros(20)
            row[idx] = pr
            np.testing.assert_allclose(row, dense, atol=1e-9)


def test_row_mass_conservation():
    m = _carpark()
    grid = Grid([-10, -10], [10, 10], [50, 50])
    inputs = grid_input_space(3, m.U)
    tol = 1e-6
    tensor = AbstractionTensor(m, grid, inputs, tol=tol)
    l_total = grid.n_cells
    for u_idx in range(inputs.n_inputs):
        kept = tensor.row_masses(u_idx)
        out = tensor.out_masses(u_idx)
        total = kept + out
        assert np.all(total <= 1.0 + 1e-12)
        assert np.all(total >= 1.0 - l_total * tol)


def test_banded_equals_general_path():
    # Diagonal dynamics run the banded path; force the general path and
    # compare expected values.
    m = _carpark()
    grid = Grid([-10, -10], [10, 10], [40, 40])
    inputs = grid_input_space(3, m.U)
    tensor = AbstractionTensor(m, grid, inputs, tol=1e-9)
    assert tensor.diagonal
    rng = np.random.default_rng(0)
    W = rng.uniform(0, 1, size=grid.n_cells)
    # the general path interpolates kernels on a sub-cell lattice, so it
    # agrees with the exact banded path only up to that quantization
    for u_idx in [0, 4, 8]:
        banded = tensor._expected_banded(W, u_idx)
        general = tensor._expected_general(W, u_idx)
        np.testing.assert_allclose(banded, general, atol=1e-5)


def test_general_path_nondiagonal_dynamics():
    # Rotation-like A: general path against explicit rows.
    A = np.array([[0.8, 0.2], [-0.15, 0.7]])
    m = LinearModel(A, np.eye(2), np.eye(2), B_w=0.5 * np.eye(2),
                    X=Polytope.box([-3, -3], [3, 3]),
                    U=Polytope.box([-1, -1], [1, 1]))
    grid = Grid([-3, -3], [3, 3], [30, 30])
    inputs = grid_input_space(2, m.U)
    tensor = AbstractionTensor(m, grid, inputs, tol=1e-10)
    assert not tensor.diagonal
    rng = np.random.default_rng(1)
    W = rng.uniform(0, 1, size=grid.n_cells)
    expect = tensor.expected_value(W, 1)
    states = rng.integers(0, grid.n_cells, size=60)
    for s in states:
        idx, pr = tensor.transition_row(int(s), 1)
        assert abs(expect[s] - pr @ W[idx]) < 5e-6


def test_expected_value_degenerate_axis_row():
    # Zero noise on one axis: unit mass on the cell containing the mean.
    m = LinearModel(np.diag([0.5, 0.5]), np.eye(2), np.eye(2),
                    B_w=np.diag([1.0, 0.0]),
                    X=Polytope.box([-6, -6], [6, 6]),
                    U=Polytope.box([0, 0], [0, 0]))
    grid = Grid([-6, -6], [6, 6], [30, 30])
    inputs = grid_input_space(1, m.U)
    tensor = AbstractionTensor(m, grid, inputs, tol=1e-12)
    state = grid.index([1.0, 1.0])
    idx, pr = tensor.transition_row(state, 0)
    # Along axis 1 the successor is deterministic at 0.5 * 1.0 = 0.5.
    cols = np.unravel_index(idx, grid.counts)[1]
    assert np.unique(cols).size == 1
    target_col = int((0.5 - grid.lows[1]) / grid.widths[1])
    assert cols[0] == target_col
    # Along axis 0 the Gaussian mass within the (wide) grid is kept.
    expected = ndtr(6 - 0.5) - ndtr(-6 - 0.5)
    assert pr.sum() == pytest.approx(expected, abs=1e-9)


def test_dense_fallback_warns_and_matches():
    cov_gain = np.array([[1.0, 0.4], [0.0, 1.0]])
    m = LinearModel(0.5 * np.eye(2), np.eye(2), np.eye(2), B_w=cov_gain,
                    X=Polytope.box([-2, -2], [2, 2]),
                    U=Polytope.box([0, 0], [0, 0]))
    grid = Grid([-2, -2], [2, 2], [6, 6])
    inputs = grid_input_space(1, m.U)
    with pytest.warns(RuntimeWarning):
        tensor = AbstractionTensor(m, grid, inputs, tol=1e-8)
    idx, pr = tensor.transition_row(grid.index([0.1, 0.1]), 0)
    assert pr.sum() <= 1.0 + 1e-9
    assert pr.sum() > 0.5  # most mass stays on this wide grid


def test_memory_contract():
    # A sweep never materializes |X| x |U| x |X|; peak incremental memory
    # stays far below the dense row block.
    import tracemalloc
    m = _carpark()
    grid = Grid([-10, -10], [10, 10], [100, 100])
    inputs = grid_input_space(3, m.U)
    tensor = AbstractionTensor(m, grid, inputs, tol=1e-6)
    W = np.linspace(0, 1, grid.n_cells)
    tensor.expected_value(W, 0)  # warm the caches
    tracemalloc.start()
    for u_idx in range(inputs.n_inputs):
        tensor.expected_value(W, u_idx)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    dense_bytes = grid.n_cells * grid.n_cells * 8
    assert peak < dense_bytes / 50


def test_label_sets_exact_and_uncertain():
    m = _carpark()
    grid = Grid([-10, -10], [10, 10], [200, 200])
    inputs = grid_input_space(3, m.U)
    abs_model = build_abstraction(m, grid, inputs, tol=1e-6)

    # eps = 0: deep interior of P1 labels exactly {p1}.
    d_mask, u_mask = label_sets(abs_model, m.labeling, 0.0)
    s = grid.index([7.0, -2.0])
    assert d_mask[s] == 0b01 and u_mask[s] == 0
    s0 = grid.index([0.0, -8.0])
    assert d_mask[s0] == 0 and u_mask[s0] == 0

    # eps = 1.005: a point deep inside a large P1 and 0.5 away from an inner
    # P2 keeps p1 certain and makes p2 uncertain: letters {p1} and {p1,p2}.
    big = Polytope.box([-10, -10], [10, 10])
    inner = Polytope.box([0.5, -1], [3, 1])
    lab2 = LabeledPartition([(big, "p1"), (inner, "p2")], ("p1", "p2"))
    d_mask, u_mask = label_sets(abs_model, lab2, 1.005)
    s = grid.index([0.0, 0.0])
    assert d_mask[s] == 0b01
    assert u_mask[s] == 0b10


def test_label_sets_soundness_sampling():
    m = _carpark()
    grid = Grid([-10, -10], [10, 10], [40, 40])
    inputs = grid_input_space(1, m.U)
    abs_model = build_abstraction(m, grid, inputs, tol=1e-6)
    eps = 0.8
    d_mask, u_mask = label_sets(abs_model, m.labeling, eps)
    rng = np.random.default_rng(5)
    states = rng.integers(0, grid.n_cells, size=30)
    for s in states:
        yhat = abs_model.outputs[s]
        # sample the eps-ball around yhat
        for _ in range(300):
            v = rng.normal(size=2)
            y = yhat + v / np.linalg.norm(v) * eps * rng.random()
            letter = m.labeling.letter(y)
            assert letter & d_mask[s] == d_mask[s]
            assert letter & ~(d_mask[s] | u_mask[s]) == 0


def test_tensor_dump_roundtrip(tmp_path):
    m = _carpark()
    grid = Grid([-10, -10], [10, 10], [20, 20])
    inputs = grid_input_space(3, m.U)
    tensor = AbstractionTensor(m, grid, inputs, tol=1e-6)
    path = tmp_path / "tensor.bin"
    tensor.save(path)
    header = AbstractionTensor.load_header(path)
    assert header["dims"] == 2
    assert header["n_inputs"] == 9
    np.testing.assert_array_equal(header["counts"], [20, 20])
    assert header["tol"] == pytest.approx(1e-6)
