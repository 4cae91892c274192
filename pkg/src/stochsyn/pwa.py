"""Piecewise-affine approximation of nonlinear dynamics.

The state space is cut into a uniform box partition; each cell gets the
first-order Taylor expansion of f at its center (input expansion at the
center of U) plus an axis-aligned error set bounding the remainder over
the cell and the whole input space.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import JacobianUnavailable
from .geometry import Polytope
from .models import PwaMode, PwaModel

SAMPLING_SAFETY = 1.5
SAMPLING_POINTS = 1000


def bound_taylor_error(model, cell, U=None, rng=None):
    """Axis-aligned box bounding the Taylor remainder on cell x U.

    With a Hessian bound callback the half-width per output coordinate is
    0.5 * H_max * r^2 where r is the cell circumradius and H_max the
    callback's per-coordinate bound on the state-Hessian norm over
    cell x U. The callback contract assumes dynamics affine in u (true
    for the registry models); anything else should rely on the sampling
    fallback, which probes residuals over cell x U and inflates the worst
    one by a safety factor. Sampled bounds are flagged as
    ``sampled_bound`` on the returned polytope.
    """
    U = model.U if U is None else U
    lows, highs = cell.bounds
    center = 0.5 * (lows + highs)
    r2 = float(np.sum((0.5 * (highs - lows)) ** 2))
    u_lows, u_highs = U.bounds
    u_center = 0.5 * (u_lows + u_highs)
    if model.hess_bound is not None:
        hmax = np.asarray(model.hess_bound(cell, U), dtype=float)
        half = 0.5 * hmax * r2
        box = Polytope.box(-half, half)
        box.sampled_bound = False
        return box
    # Sampling fallback: worst observed residual times a safety factor.
    rng = np.random.default_rng(0) if rng is None else rng
    A = model.jac_x(center, u_center)
    B = model.jac_u(center, u_center)
    a = model.f(center, u_center) - A @ center - B @ u_center
    xs = rng.uniform(lows, highs, size=(SAMPLING_POINTS, len(lows)))
    us = rng.uniform(u_lows, u_highs, size=(SAMPLING_POINTS, len(u_lows)))
    worst = np.zeros(model.n)
    for x, u in zip(xs, us):
        res = np.abs(model.f(x, u) - (A @ x + B @ u + a))
        worst = np.maximum(worst, res)
    half = SAMPLING_SAFETY * worst
    box = Polytope.box(-half, half)
    box.sampled_bound = True
    return box


def pwa_approximation(model, Np):
    """Approximate a nonlinear model by a PWA model on a uniform partition.

    ``Np`` gives the number of cells per state axis. Each mode is the
    Taylor expansion of f at the cell center with the input fixed at the
    center of U.
    """
    if model.jac_x is None or model.jac_u is None:
        raise JacobianUnavailable("model provides no Jacobians")
    Np = np.atleast_1d(np.asarray(Np, dtype=int))
    if Np.size == 1 and model.n > 1:
        Np = np.full(model.n, Np[0])
    if np.any(Np < 1):
        raise ValueError("need at least one partition cell per axis")
    lows, highs = model.X.bounds
    widths = (highs - lows) / Np
    u_lows, u_highs = model.U.bounds
    u0 = 0.5 * (u_lows + u_highs)
    modes = []
    for idx in itertools.product(*(range(k) for k in Np)):
        idx = np.array(idx)
        c_lows = lows + idx * widths
        c_highs = c_lows + widths
        cell = Polytope.box(c_lows, c_highs)
        center = 0.5 * (c_lows + c_highs)
        A_i = np.atleast_2d(model.jac_x(center, u0))
        B_i = np.atleast_2d(model.jac_u(center, u0))
        a_i = model.f(center, u0) - A_i @ center - B_i @ u0
        K_i = bound_taylor_error(model, cell)
        modes.append(PwaMode(cell=cell, A=A_i, B=B_i, a=a_i,
                             B_w=model.B_w.copy(), K=K_i))
    return PwaModel(modes, C=model.C, X=model.X, U=model.U,
                    labeling=model.labeling, mu=model.mu, Sigma=model.Sigma,
                    grid_shape=tuple(int(k) for k in Np), source=model)
