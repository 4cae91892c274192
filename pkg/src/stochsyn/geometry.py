"""Polytopes in halfspace form, labeled output partitions, and Pre sets.

All sets are convex polytopes H x <= h with rows normalized to unit
Euclidean norm. Axis-aligned boxes keep their bounds alongside the
halfspace form so distance and erosion queries stay exact and cheap.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionMismatch, EmptyResult

TOL_GEO = 1e-9


class Polytope:
    """Bounded convex polytope { x : H x <= h } with unit-norm rows."""

    def __init__(self, H, h, box=None):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        h = np.asarray(h, dtype=float).ravel()
        if H.shape[0] != h.shape[0]:
            raise DimensionMismatch(
                f"H has {H.shape[0]} rows but h has {h.shape[0]} entries")
        norms = np.linalg.norm(H, axis=1)
        if np.any(norms < 1e-14):
            raise DimensionMismatch("zero row in halfspace matrix")
        self.H = H / norms[:, None]
        self.h = h / norms
        self.dim = H.shape[1]
        # (lows, highs) when the polytope is a known axis-aligned box
        self._box = box
        self._vertices = None

    # -- constructors -------------------------------------------------------

    @classmethod
    def box(cls, lows, highs):
        """Axis-aligned box from per-axis bounds."""
        lows = np.asarray(lows, dtype=float).ravel()
        highs = np.asarray(highs, dtype=float).ravel()
        if lows.shape != highs.shape:
            raise DimensionMismatch("box bounds differ in length")
        if np.any(highs < lows):
            raise EmptyResult("box has inverted bounds")
        n = lows.size
        H = np.vstack([np.eye(n), -np.eye(n)])
        h = np.concatenate([highs, -lows])
        return cls(H, h, box=(lows.copy(), highs.copy()))

    @classmethod
    def from_vertices(cls, vertices):
        """Convex hull of a vertex list (dimension <= 3)."""
        V = np.atleast_2d(np.asarray(vertices, dtype=float))
        n = V.shape[1]
        if n == 1:
            return cls.box([V.min()], [V.max()])
        if n > 3:
            raise DimensionMismatch("vertex conversion supported up to dimension 3")
        from scipy.spatial import ConvexHull
        hull = ConvexHull(V)
        # Qhull equations: A x + b <= 0
        H = hull.equations[:, :-1]
        h = -hull.equations[:, -1]
        poly = cls(H, h)
        poly._vertices = V[hull.vertices]
        return poly

    # -- predicates ---------------------------------------------------------

    @property
    def is_box(self):
        return self._box is not None

    @property
    def bounds(self):
        """(lows, highs) for a box polytope."""
        if self._box is None:
            raise ValueError("not an axis-aligned box")
        return self._box

    def contains(self, x, tol=TOL_GEO):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise DimensionMismatch(
                f"point has dimension {x.size}, polytope {self.dim}")
        return bool(np.all(self.H @ x <= self.h + tol))

    def contains_many(self, X, tol=TOL_GEO):
        """Vectorized membership for an (m, dim) array of points."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatch(
                f"points have dimension {X.shape[1]}, polytope {self.dim}")
        return np.all(X @ self.H.T <= self.h + tol, axis=1)

    def is_empty(self):
        res = linprog(np.zeros(self.dim), A_ub=self.H, b_ub=self.h,
                      bounds=[(None, None)] * self.dim, method="highs")
        return not res.success

    # -- geometry -----------------------------------------------------------

    def signed_distance(self, y):
        """Euclidean distance to the polytope; negative depth inside.

        Outside: distance to the nearest point of the set. Inside: minus the
        distance to the boundary.
        """
        y = np.asarray(y, dtype=float).ravel()
        if y.size != self.dim:
            raise DimensionMismatch(
                f"point has dimension {y.size}, polytope {self.dim}")
        if self._box is not None:
            lows, highs = self._box
            over = np.maximum(np.maximum(lows - y, y - highs), 0.0)
            outside = np.linalg.norm(over)
            if outside > 0.0:
                return outside
            return -float(np.min(np.minimum(y - lows, highs - y)))
        margins = self.H @ y - self.h
        if np.all(margins <= 0.0):
            # Interior: every boundary point lies on a face plane, so the
            # nearest one is along the least-slack normal.
            return float(np.max(margins))
        return float(np.linalg.norm(self._project(y) - y))

    def signed_distance_many(self, Y):
        """Vectorized signed distance for an (m, dim) array (box only fast)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self._box is not None:
            lows, highs = self._box
            over = np.maximum(np.maximum(lows - Y, Y - highs), 0.0)
            outside = np.linalg.norm(over, axis=1)
            depth = np.min(np.minimum(Y - lows, highs - Y), axis=1)
            return np.where(outside > 0.0, outside, -depth)
        return np.array([self.signed_distance(y) for y in Y])

    def _project(self, y):
        """Nearest point in the polytope by active-set enumeration.

        Exact for a modest number of rows; the minimizer is the projection of
        y onto the affine hull of some active constraint subset, feasible and
        with nonnegative multipliers.
        """
        m = self.H.shape[0]
        if m > 24 or self.dim > 3:
            return self._project_iterative(y)
        best = None
        best_d2 = np.inf
        for k in range(1, self.dim + 1):
            for rows in itertools.combinations(range(m), k):
                A = self.H[list(rows)]
                b = self.h[list(rows)]
                AAt = A @ A.T
                try:
                    lam = np.linalg.solve(AAt, A @ y - b)
                except np.linalg.LinAlgError:
                    continue
                if np.any(lam < -1e-12):
                    continue
                p = y - A.T @ lam
                if np.all(self.H @ p <= self.h + 1e-9):
                    d2 = float(np.dot(p - y, p - y))
                    if d2 < best_d2:
                        best_d2 = d2
                        best = p
        if best is None:
            # Should not happen for nonempty polytopes; fall back.
            return self._project_iterative(y)
        return best

    def _project_iterative(self, y):
        from scipy.optimize import minimize
        cons = {"type": "ineq", "fun": lambda p: self.h - self.H @ p,
                "jac": lambda p: -self.H}
        x0 = self.chebyshev_center()
        res = minimize(lambda p: np.dot(p - y, p - y), x0, jac=lambda p: 2 * (p - y),
                       constraints=[cons], method="SLSQP",
                       options={"maxiter": 400, "ftol": 1e-14})
        return res.x

    def chebyshev_center(self):
        """Center of the largest inscribed ball."""
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        A = np.hstack([self.H, np.ones((self.H.shape[0], 1))])
        res = linprog(c, A_ub=A, b_ub=self.h,
                      bounds=[(None, None)] * self.dim + [(0, None)],
                      method="highs")
        if not res.success:
            raise EmptyResult("polytope is empty")
        return res.x[:-1]

    def erode(self, eps):
        """Erosion by a Euclidean ball of radius eps (exact in H-form)."""
        if self._box is not None:
            lows, highs = self._box
            if np.any(highs - eps < lows + eps):
                return None
            return Polytope.box(lows + eps, highs - eps)
        eroded = Polytope(self.H, self.h - eps)
        return None if eroded.is_empty() else eroded

    def intersect(self, other):
        if other.dim != self.dim:
            raise DimensionMismatch("dimension mismatch in intersection")
        if self._box is not None and other._box is not None:
            lows = np.maximum(self._box[0], other._box[0])
            highs = np.minimum(self._box[1], other._box[1])
            if np.any(highs < lows):
                raise EmptyResult("empty intersection")
            return Polytope.box(lows, highs)
        joined = Polytope(np.vstack([self.H, other.H]),
                          np.concatenate([self.h, other.h]))
        if joined.is_empty():
            raise EmptyResult("empty intersection")
        return joined

    def support(self, direction):
        """Support function max_{x in P} <direction, x>."""
        d = np.asarray(direction, dtype=float).ravel()
        if self._box is not None:
            lows, highs = self._box
            center = 0.5 * (lows + highs)
            radius = 0.5 * (highs - lows)
            return float(d @ center + np.abs(d) @ radius)
        res = linprog(-d, A_ub=self.H, b_ub=self.h,
                      bounds=[(None, None)] * self.dim, method="highs")
        if not res.success:
            raise EmptyResult("unbounded or empty polytope in support query")
        return float(-res.fun)

    def bounding_box(self):
        """Smallest axis-aligned box containing the polytope."""
        if self._box is not None:
            return Polytope.box(*self._box)
        lows = np.empty(self.dim)
        highs = np.empty(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = 1.0
            highs[i] = self.support(e)
            lows[i] = -self.support(-e)
        return Polytope.box(lows, highs)

    def vertices(self):
        """Vertex array (boxes and 2D polytopes)."""
        if self._vertices is not None:
            return self._vertices
        if self._box is not None:
            lows, highs = self._box
            corners = np.array(list(itertools.product(*zip(lows, highs))))
            self._vertices = corners
            return corners
        raise DimensionMismatch("vertex enumeration only for boxes or hull input")

    def sample(self, rng, m=1):
        """Uniform rejection sampling inside the polytope from its box."""
        box = self.bounding_box()
        lows, highs = box.bounds
        out = np.empty((m, self.dim))
        filled = 0
        while filled < m:
            cand = rng.uniform(lows, highs, size=(4 * (m - filled), self.dim))
            keep = cand[self.contains_many(cand)]
            take = min(keep.shape[0], m - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out

    def __repr__(self):
        if self._box is not None:
            lows, highs = self._box
            spans = ", ".join(f"[{lo:g},{hi:g}]" for lo, hi in zip(lows, highs))
            return f"Polytope(box {spans})"
        return f"Polytope({self.H.shape[0]} halfspaces, dim {self.dim})"


def contains(poly, x, tol=TOL_GEO):
    return poly.contains(x, tol=tol)


def signed_distance(poly, y):
    return poly.signed_distance(y)


def pre_set(target, model, U):
    """Outer approximation of the one-step controllable predecessors.

    Pre(target) = { x in X : exists u in U with A x + B u + a in target },
    relaxed row-wise using the support function of B U, then intersected
    with the model's state space.
    """
    Hp, hp = target.H, target.h
    A = model.A
    B = model.B
    a = model.a
    slack = np.array([U.support(-(Hp[i] @ B)) for i in range(Hp.shape[0])])
    H_new = Hp @ A
    h_new = hp - Hp @ a + slack
    keep = np.linalg.norm(H_new, axis=1) > 1e-12
    if not np.all(keep):
        # Rows with H A = 0 are either trivially true or globally infeasible.
        if np.any(h_new[~keep] < -TOL_GEO):
            raise EmptyResult("pre-set is empty: some target row is unreachable")
        H_new = H_new[keep]
        h_new = h_new[keep]
    if H_new.shape[0] == 0:
        return model.X
    pre = Polytope(H_new, h_new)
    try:
        result = pre.intersect(model.X)
    except EmptyResult:
        raise EmptyResult("pre-set does not meet the state space")
    if result.is_empty():
        raise EmptyResult("pre-set is empty")
    return result


class LabeledPartition:
    """Output-space regions, each carrying one atomic proposition.

    Regions may overlap; the letter of a point sets every AP whose region
    contains it.
    """

    def __init__(self, regions, ap_names, universe=None):
        self.regions = list(regions)
        self.ap_names = tuple(ap_names)
        self.universe = universe
        by_ap = {}
        for poly, ap in self.regions:
            if ap not in self.ap_names:
                raise ValueError(f"region labeled with unknown AP {ap!r}")
            by_ap.setdefault(ap, []).append(poly)
        self._by_ap = by_ap

    @property
    def n_aps(self):
        return len(self.ap_names)

    def letter(self, y):
        """Bitmask letter of an output point."""
        mask = 0
        for i, ap in enumerate(self.ap_names):
            for poly in self._by_ap.get(ap, ()):
                if poly.contains(y):
                    mask |= 1 << i
                    break
        return mask

    def letters_many(self, Y):
        """Vectorized letters for an (m, p) array of outputs."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        masks = np.zeros(Y.shape[0], dtype=np.int64)
        for i, ap in enumerate(self.ap_names):
            hit = np.zeros(Y.shape[0], dtype=bool)
            for poly in self._by_ap.get(ap, ()):
                hit |= poly.contains_many(Y)
            masks |= hit.astype(np.int64) << i
        return masks
