"""System classes: linear/affine, piecewise-affine, and nonlinear models.

Every model carries its Gaussian disturbance description (mu, Sigma, gain
B_w), an output map C, polytopic state/input spaces, and the labeled output
regions tying trajectories to atomic propositions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NotPsd, Unreachable
from .geometry import LabeledPartition, Polytope


def _as_matrix(M, rows, cols, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (rows, cols):
        raise DimensionMismatch(f"{name} must be {rows}x{cols}, got {M.shape}")
    return M


class LinearModel:
    """Affine stochastic difference equation.

        x+ = A x + B u + a + B_w w,   y = C x,   w ~ N(mu, Sigma)
    """

    def __init__(self, A, B, C, a=None, B_w=None, mu=None, Sigma=None,
                 X=None, U=None, labeling=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if B.shape[0] != n:
            raise DimensionMismatch(f"B must have {n} rows, got {B.shape}")
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if C.shape[1] != n:
            raise DimensionMismatch(f"C must have {n} columns, got {C.shape}")
        self.A = A
        self.B = B
        self.C = C
        self.n = n
        self.m = B.shape[1]
        self.p = C.shape[0]
        self.a = (np.zeros(n) if a is None
                  else np.asarray(a, dtype=float).reshape(n))
        if B_w is None:
            B_w = np.eye(n)
        self.B_w = np.atleast_2d(np.asarray(B_w, dtype=float))
        if self.B_w.shape[0] != n:
            raise DimensionMismatch(f"B_w must have {n} rows")
        self.q = self.B_w.shape[1]
        self.mu = (np.zeros(self.q) if mu is None
                   else np.asarray(mu, dtype=float).reshape(self.q))
        self.Sigma = (np.eye(self.q) if Sigma is None
                      else _as_matrix(Sigma, self.q, self.q, "Sigma"))
        if not np.allclose(self.Sigma, self.Sigma.T, atol=1e-10):
            raise NotPsd("Sigma must be symmetric")
        self.X = X
        self.U = U
        self.labeling = labeling

    @property
    def ap_names(self):
        return self.labeling.ap_names if self.labeling else ()

    def is_normalized(self):
        return (np.allclose(self.mu, 0.0, atol=1e-12)
                and np.allclose(self.Sigma, np.eye(self.q), atol=1e-12))

    def step(self, x, u, w):
        return self.A @ x + self.B @ u + self.a + self.B_w @ w

    def output(self, x):
        return self.C @ np.asarray(x, dtype=float)

    def replace(self, **kw):
        args = dict(A=self.A, B=self.B, C=self.C, a=self.a, B_w=self.B_w,
                    mu=self.mu, Sigma=self.Sigma, X=self.X, U=self.U,
                    labeling=self.labeling)
        args.update(kw)
        return LinearModel(**args)


@dataclass
class PwaMode:
    """One affine piece: dynamics on the partition cell, with its Taylor
    error set K (an axis-aligned box around zero). ``K_fb`` is this piece's
    interface feedback gain, filled in by the similarity quantification."""
    cell: Polytope
    A: np.ndarray
    B: np.ndarray
    a: np.ndarray
    B_w: np.ndarray
    K: Polytope
    K_fb: np.ndarray = None


class PwaModel:
    """Piecewise-affine model over a uniform box partition of X."""

    def __init__(self, modes, C, X, U, labeling=None, mu=None, Sigma=None,
                 grid_shape=None, source=None):
        self.modes = list(modes)
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.X = X
        self.U = U
        self.labeling = labeling
        self.n = self.modes[0].A.shape[0]
        self.m = self.modes[0].B.shape[1]
        self.p = self.C.shape[0]
        self.q = self.modes[0].B_w.shape[1]
        self.mu = np.zeros(self.q) if mu is None else np.asarray(mu, dtype=float)
        self.Sigma = np.eye(self.q) if Sigma is None else np.asarray(Sigma, dtype=float)
        self.grid_shape = grid_shape  # cells per axis when built from a grid
        self.source = source  # originating nonlinear model, if any

    @property
    def n_modes(self):
        return len(self.modes)

    @property
    def ap_names(self):
        return self.labeling.ap_names if self.labeling else ()

    def is_normalized(self):
        return (np.allclose(self.mu, 0.0, atol=1e-12)
                and np.allclose(self.Sigma, np.eye(self.q), atol=1e-12))

    def mode_index(self, x):
        """Index of the partition cell containing x (center rule on grids)."""
        x = np.asarray(x, dtype=float).ravel()
        if self.grid_shape is not None:
            lows, highs = self.X.bounds
            counts = np.asarray(self.grid_shape)
            widths = (highs - lows) / counts
            idx = np.floor((x - lows) / widths).astype(int)
            idx = np.clip(idx, 0, counts - 1)
            return int(np.ravel_multi_index(idx, counts))
        for i, mode in enumerate(self.modes):
            if mode.cell.contains(x):
                return i
        raise DimensionMismatch("point lies in no partition cell")

    def mode_index_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.grid_shape is not None:
            lows, highs = self.X.bounds
            counts = np.asarray(self.grid_shape)
            widths = (highs - lows) / counts
            idx = np.floor((X - lows) / widths).astype(int)
            idx = np.clip(idx, 0, counts - 1)
            return np.ravel_multi_index(idx.T, counts)
        return np.array([self.mode_index(x) for x in X])

    def step(self, x, u, w):
        mode = self.modes[self.mode_index(x)]
        return mode.A @ x + mode.B @ u + mode.a + mode.B_w @ w

    def output(self, x):
        return self.C @ np.asarray(x, dtype=float)


class NonlinearModel:
    """Nonlinear dynamics x+ = f(x, u) + B_w w with analytic Jacobians.

    ``f``, ``jac_x``, ``jac_u`` are callables of (x, u); ``hess_bound``, when
    given, maps a state cell (Polytope) and the input space to a per-output
    bound on the spectral norm of the Hessian of f over that cell.
    """

    def __init__(self, f, jac_x, jac_u, n, m, C=None, B_w=None, mu=None,
                 Sigma=None, X=None, U=None, labeling=None, hess_bound=None,
                 name=None):
        self.f = f
        self.jac_x = jac_x
        self.jac_u = jac_u
        self.n = n
        self.m = m
        self.C = np.eye(n) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
        self.p = self.C.shape[0]
        self.B_w = np.eye(n) if B_w is None else np.atleast_2d(np.asarray(B_w, dtype=float))
        self.q = self.B_w.shape[1]
        self.mu = np.zeros(self.q) if mu is None else np.asarray(mu, dtype=float)
        self.Sigma = np.eye(self.q) if Sigma is None else np.asarray(Sigma, dtype=float)
        self.X = X
        self.U = U
        self.labeling = labeling
        self.hess_bound = hess_bound
        self.name = name

    @property
    def ap_names(self):
        return self.labeling.ap_names if self.labeling else ()

    def is_normalized(self):
        return (np.allclose(self.mu, 0.0, atol=1e-12)
                and np.allclose(self.Sigma, np.eye(self.q), atol=1e-12))

    def step(self, x, u, w):
        return self.f(np.asarray(x, float), np.asarray(u, float)) + self.B_w @ w

    def output(self, x):
        return self.C @ np.asarray(x, dtype=float)


@dataclass
class SteadyStateShift:
    """Record of a steady-state change of coordinates: x = x_dev + x_ss."""
    x_ss: np.ndarray
    u_ss: np.ndarray
    y_ss: np.ndarray


def sqrtm_psd(Sigma, tol=1e-10):
    """Symmetric PSD square root via eigendecomposition, clamping tiny
    negative eigenvalues at zero."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    vals, vecs = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
    if np.any(vals < -tol):
        raise NotPsd(f"covariance has negative eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def normalize_disturbance(model):
    """Rewrite w ~ N(mu, Sigma) as a standard normal disturbance.

    Returns the equivalent model with B_w' = B_w Sigma^(1/2), the mean folded
    into the affine term, and the new affine offset. The state distribution
    is unchanged.
    """
    root = sqrtm_psd(model.Sigma)
    a_new = model.a + model.B_w @ model.mu
    new = model.replace(B_w=model.B_w @ root, a=a_new,
                        mu=np.zeros(model.q), Sigma=np.eye(model.q))
    return new, a_new


def steady_state_shift(model, y_ss):
    """Move to deviation coordinates around the steady state with output y_ss.

    Solves x_ss = A x_ss + B u_ss + a together with C x_ss = y_ss and returns
    the shifted model (a = 0, X/U/labeling translated) plus the shift record.
    Raises Unreachable when no solution exists or u_ss leaves U.
    """
    y_ss = np.asarray(y_ss, dtype=float).reshape(model.p)
    n, m, p = model.n, model.m, model.p
    lhs = np.block([[np.eye(n) - model.A, -model.B],
                    [model.C, np.zeros((p, m))]])
    rhs = np.concatenate([model.a, y_ss])
    sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    if np.linalg.norm(lhs @ sol - rhs) > 1e-7 * max(1.0, np.linalg.norm(rhs)):
        raise Unreachable("no steady state produces the requested output")
    x_ss, u_ss = sol[:n], sol[n:]
    if model.U is not None and not model.U.contains(u_ss, tol=1e-9):
        raise Unreachable("steady-state input lies outside the input space")
    record = SteadyStateShift(x_ss=x_ss, u_ss=u_ss, y_ss=y_ss)

    def shift_poly(poly, offset):
        if poly is None:
            return None
        if poly.is_box:
            lows, highs = poly.bounds
            return Polytope.box(lows - offset, highs - offset)
        return Polytope(poly.H, poly.h - poly.H @ offset)

    X = shift_poly(model.X, x_ss)
    U = shift_poly(model.U, u_ss)
    labeling = None
    if model.labeling is not None:
        regions = [(shift_poly(poly, model.C @ x_ss), ap)
                   for poly, ap in model.labeling.regions]
        universe = shift_poly(model.labeling.universe, model.C @ x_ss)
        labeling = LabeledPartition(regions, model.labeling.ap_names, universe)
    shifted = model.replace(a=np.zeros(n), X=X, U=U, labeling=labeling)
    return shifted, record


# ---------------------------------------------------------------------------
# Registry of built-in nonlinear dynamics


def _vanderpol(tau):
    def f(x, u):
        u = np.atleast_1d(u)
        return np.array([
            x[0] + x[1] * tau,
            x[1] + (-x[0] + (1.0 - x[0] ** 2) * x[1]) * tau + u[0],
        ])

    def jac_x(x, u):
        return np.array([
            [1.0, tau],
            [(-1.0 - 2.0 * x[0] * x[1]) * tau, 1.0 + (1.0 - x[0] ** 2) * tau],
        ])

    def jac_u(x, u):
        return np.array([[0.0], [1.0]])

    def hess_bound(cell, U):
        # Second derivatives: d2f2/dx1dx1 = -2 x2 tau, d2f2/dx1dx2 = -2 x1 tau.
        lows, highs = cell.bounding_box().bounds
        x1 = max(abs(lows[0]), abs(highs[0]))
        x2 = max(abs(lows[1]), abs(highs[1]))
        # Frobenius norm bounds the spectral norm of the symmetric Hessian.
        h2 = tau * np.sqrt(4.0 * x2 ** 2 + 8.0 * x1 ** 2)
        return np.array([0.0, h2])

    return f, jac_x, jac_u, hess_bound


def make_nonlinear(name, params=None, **kw):
    """Instantiate a registered nonlinear model by name."""
    params = dict(params or {})
    if name == "vanderpol":
        tau = float(params.get("tau", 0.1))
        f, jx, ju, hb = _vanderpol(tau)
        return NonlinearModel(f, jx, ju, n=2, m=1, hess_bound=hb,
                              name="vanderpol", **kw)
    raise KeyError(f"unknown nonlinear dynamics {name!r}")
