"""Finite-state abstraction: grids, abstract inputs, factored transitions.

The abstraction of a (piecewise-)affine model with normalized Gaussian noise
has successor distributions that factor per axis: the mean is an affine map
of the cell center, and the probability of landing in a target cell is a
product of per-axis Gaussian CDF differences. The full transition matrix is
never materialized; dynamic-programming sweeps evaluate it by per-axis
banded operators (diagonal dynamics) or by an upsampled convolution plus a
per-state gather (general dynamics).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len
from scipy.special import ndtr
import scipy.sparse

from .errors import DimensionMismatch, FractionOverflow
from .geometry import Polytope
from .models import LinearModel, PwaModel

KERNEL_BUCKETS = 64          # sub-cell quantization of kernel offsets
FINE_MEMORY_BUDGET = 6e7     # bytes allowed for the upsampled smoothing array


class Grid:
    """Uniform box grid over the state space; cells indexed in C order."""

    def __init__(self, lows, highs, counts):
        self.lows = np.asarray(lows, dtype=float).ravel()
        self.highs = np.asarray(highs, dtype=float).ravel()
        self.counts = np.asarray(counts, dtype=int).ravel()
        if not (self.lows.size == self.highs.size == self.counts.size):
            raise DimensionMismatch("grid bounds and counts disagree")
        if np.any(self.counts < 1):
            raise ValueError("grid needs at least one cell per axis")
        self.dims = self.lows.size
        self.widths = (self.highs - self.lows) / self.counts
        self.n_cells = int(np.prod(self.counts))
        self._centers = None

    @classmethod
    def from_polytope(cls, X, counts):
        lows, highs = X.bounds
        counts = np.atleast_1d(np.asarray(counts, dtype=int))
        if counts.size == 1 and lows.size > 1:
            counts = distribute_cells(int(counts[0]), highs - lows)
        return cls(lows, highs, counts)

    def centers_axis(self, d):
        return self.lows[d] + (np.arange(self.counts[d]) + 0.5) * self.widths[d]

    def centers(self):
        """(n_cells, dims) array of cell centers, C order."""
        if self._centers is None:
            axes = [self.centers_axis(d) for d in range(self.dims)]
            mesh = np.meshgrid(*axes, indexing="ij")
            self._centers = np.stack([m.ravel() for m in mesh], axis=1)
        return self._centers

    def center(self, flat_index):
        multi = np.unravel_index(flat_index, self.counts)
        return self.lows + (np.asarray(multi, dtype=float) + 0.5) * self.widths

    def index(self, x):
        """Flat cell index of a point, or -1 outside the grid."""
        x = np.asarray(x, dtype=float).ravel()
        rel = (x - self.lows) / self.widths
        idx = np.floor(rel).astype(int)
        # Points exactly on the upper boundary belong to the last cell.
        idx = np.where((idx == self.counts) & (rel <= self.counts + 1e-12),
                       self.counts - 1, idx)
        if np.any(idx < 0) or np.any(idx >= self.counts):
            return -1
        return int(np.ravel_multi_index(idx, self.counts))

    def index_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rel = (X - self.lows) / self.widths
        idx = np.floor(rel).astype(int)
        idx = np.where((idx == self.counts) & (rel <= self.counts + 1e-12),
                       self.counts - 1, idx)
        inside = np.all((idx >= 0) & (idx < self.counts), axis=1)
        flat = np.full(X.shape[0], -1, dtype=np.int64)
        if np.any(inside):
            flat[inside] = np.ravel_multi_index(idx[inside].T, self.counts)
        return flat

    def grid_units(self, X):
        """Continuous cell coordinates: the center of cell i maps to i."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X - self.lows) / self.widths - 0.5

    def __repr__(self):
        shape = "x".join(str(c) for c in self.counts)
        return f"Grid({shape} cells)"


def distribute_cells(total, spans):
    """Split a total cell budget across axes proportionally to their spans."""
    spans = np.asarray(spans, dtype=float)
    d = spans.size
    scale = (total / np.prod(spans)) ** (1.0 / d)
    counts = np.maximum(1, np.rint(spans * scale).astype(int))
    return counts


@dataclass
class AbstractInputSet:
    """Finite abstract inputs plus the split of the input space.

    With a feedback interface, only the actuation sub-box is gridded; a
    fraction of the budget is reserved for the feedback term (and whatever
    remains for the reduced-state shift of the reduction interface).
    """
    points: np.ndarray            # (n_inputs, m)
    actuation: Polytope
    feedback: Polytope | None
    fractions: tuple
    lu: tuple

    @property
    def n_inputs(self):
        return self.points.shape[0]

    @property
    def leftover_fraction(self):
        return 1.0 - self.fractions[0] - self.fractions[1]


def grid_input_space(lu, U, interface=0, fractions=None):
    """Grid the input space; reserve budget for feedback when needed.

    ``lu`` is the number of abstract inputs per axis (scalar or list).
    With ``interface=0`` the whole input space is actuation. With the
    feedback interfaces the actuation box is the input box scaled by
    ``fractions[0]`` around its center and the feedback box by
    ``fractions[1]``.
    """
    lows, highs = U.bounds
    m = lows.size
    lu = np.atleast_1d(np.asarray(lu, dtype=int))
    if lu.size == 1 and m > 1:
        lu = np.full(m, lu[0])
    if np.any(lu < 1):
        raise ValueError("need at least one abstract input per axis")
    if interface == 0:
        act = Polytope.box(lows, highs)
        feedback = None
        fractions = (1.0, 0.0)
    else:
        if fractions is None:
            fractions = (0.6, 0.175)
        f_act, f_fb = float(fractions[0]), float(fractions[1])
        if f_act < 0 or f_fb < 0 or f_act + f_fb > 1.0 + 1e-12:
            raise FractionOverflow(
                f"actuation {f_act} + feedback {f_fb} exceeds the input budget")
        center = 0.5 * (lows + highs)
        radius = 0.5 * (highs - lows)
        act = Polytope.box(center - f_act * radius, center + f_act * radius)
        feedback = Polytope.box(-f_fb * radius, f_fb * radius)
        fractions = (f_act, f_fb)
    a_lows, a_highs = act.bounds
    axes = []
    for d in range(m):
        if lu[d] == 1:
            axes.append(np.array([0.5 * (a_lows[d] + a_highs[d])]))
        else:
            axes.append(np.linspace(a_lows[d], a_highs[d], lu[d]))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.ravel() for g in mesh], axis=1)
    return AbstractInputSet(points=points, actuation=act, feedback=feedback,
                            fractions=fractions, lu=tuple(int(k) for k in lu))


def _axis_entries(offsets, width, sigma):
    """Exact cell masses: Phi((s + 1/2) w / sigma) - Phi((s - 1/2) w / sigma)."""
    hi = ndtr((offsets + 0.5) * width / sigma)
    lo = ndtr((offsets - 0.5) * width / sigma)
    return hi - lo


def _support_radius(width, sigma, tol, cap):
    """Window half-width beyond which any axis entry is below tol."""
    if sigma <= 0.0:
        return 0
    ratio = sigma / width
    s = np.arange(1, int(np.ceil(10 * ratio)) + 3, dtype=float)
    ub = (1.0 / (ratio * np.sqrt(2 * np.pi))) \
        * np.exp(-0.5 * ((s - 1.0) / ratio) ** 2)
    below = np.nonzero(ub < tol)[0]
    radius = int(s[below[0]]) if below.size else int(s[-1])
    return min(radius, cap)


class AbstractionTensor:
    """Factored transition kernel of the finite-state abstraction.

    Stores the deterministic shift (successor means, an affine map of the
    cell centers, lazily evaluated per input) and the per-axis Gaussian
    kernels. Probability queries and DP sweeps combine the two; the dense
    state-to-state matrix is never formed.
    """

    def __init__(self, model, grid, inputs, tol):
        self.grid = grid
        self.inputs = inputs
        self.tol = float(tol)
        d = grid.dims
        if isinstance(model, PwaModel):
            modes = model.modes
            self.A_modes = np.stack([mo.A for mo in modes])
            self.B_modes = np.stack([mo.B for mo in modes])
            self.a_modes = np.stack([mo.a for mo in modes])
            B_w = modes[0].B_w
            if any(not np.allclose(mo.B_w, B_w, atol=1e-12) for mo in modes):
                raise DimensionMismatch(
                    "factored abstraction needs a mode-independent noise gain")
            self.mode_ids = model.mode_index_many(grid.centers())
        else:
            self.A_modes = model.A[None]
            self.B_modes = model.B[None]
            self.a_modes = model.a[None]
            B_w = model.B_w
            self.mode_ids = np.zeros(grid.n_cells, dtype=np.int64)
        if not model.is_normalized():
            raise ValueError("normalize the disturbance before abstracting")
        cov = B_w @ B_w.T
        self.dense_noise = not np.allclose(cov, np.diag(np.diag(cov)),
                                           atol=1e-12)
        if self.dense_noise:
            warnings.warn("non-diagonal noise covariance: falling back to "
                          "dense per-cell integration", RuntimeWarning)
            self.cov = cov
        self.sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        self.single_mode = self.A_modes.shape[0] == 1
        self.diagonal = (self.single_mode and not self.dense_noise and
                         np.allclose(self.A_modes[0],
                                     np.diag(np.diag(self.A_modes[0])),
                                     atol=1e-14))
        tol_axis = self.tol / d
        self.radius = np.array([
            _support_radius(grid.widths[k], self.sigma[k], tol_axis,
                            int(grid.counts[k]))
            for k in range(d)])
        self._mean_cache = {}
        self._banded_cache = {}
        self._general_cache = {}

    # -- means ---------------------------------------------------------------

    def means_grid_units(self, u_idx):
        """Successor means for every cell under one abstract input, in grid
        units (center of cell i maps to coordinate i)."""
        if u_idx in self._mean_cache:
            return self._mean_cache[u_idx]
        centers = self.grid.centers()
        u = self.inputs.points[u_idx]
        if self.single_mode:
            mu = centers @ self.A_modes[0].T + self.B_modes[0] @ u + self.a_modes[0]
        else:
            A = self.A_modes[self.mode_ids]
            shift = self.B_modes @ u + self.a_modes
            mu = np.einsum("sij,sj->si", A, centers) + shift[self.mode_ids]
        G = (mu - self.grid.lows) / self.grid.widths - 0.5
        if len(self._mean_cache) < 32:
            self._mean_cache[u_idx] = G
        return G

    # -- exact row queries -----------------------------------------------------

    def transition_row(self, state, u_idx, keep_tol=None):
        """Sparse successor distribution of one (state, input) pair.

        Returns (flat_indices, probabilities). Entries are exact CDF
        differences; the kernel window drops per-axis entries below
        ``keep_tol`` (defaults to the tensor tolerance).
        """
        if self.dense_noise:
            return self._dense_row(state, u_idx)
        keep_tol = self.tol if keep_tol is None else keep_tol
        g = self.means_grid_units(u_idx)[state]
        axes_idx = []
        axes_val = []
        for d in range(self.grid.dims):
            l_d = self.grid.counts[d]
            if self.sigma[d] <= 0.0:
                cell = int(np.floor(g[d] + 0.5))
                if 0 <= cell < l_d:
                    axes_idx.append(np.array([cell]))
                    axes_val.append(np.array([1.0]))
                else:
                    return np.empty(0, dtype=np.int64), np.empty(0)
                continue
            base = int(np.floor(g[d] + 0.5))
            rad = _support_radius(self.grid.widths[d], self.sigma[d],
                                  min(keep_tol, self.tol) / self.grid.dims,
                                  int(l_d) + 1)
            js = np.arange(base - rad, base + rad + 1)
            vals = _axis_entries(js - g[d], self.grid.widths[d], self.sigma[d])
            inside = (js >= 0) & (js < l_d)
            axes_idx.append(js[inside])
            axes_val.append(vals[inside])
        prob = axes_val[0]
        flat = axes_idx[0]
        for d in range(1, self.grid.dims):
            prob = np.outer(prob, axes_val[d]).ravel()
            flat = (flat[:, None] * self.grid.counts[d] + axes_idx[d]).ravel()
        keep = prob >= 0.0
        return flat[keep], prob[keep]

    def _dense_row(self, state, u_idx):
        from scipy.stats import multivariate_normal
        g = self.means_grid_units(u_idx)[state]
        mu = self.grid.lows + (g + 0.5) * self.grid.widths
        mvn = multivariate_normal(mean=mu, cov=self.cov, allow_singular=True)
        n = self.grid.n_cells
        probs = np.empty(n)
        for j in range(n):
            multi = np.unravel_index(j, self.grid.counts)
            lo = self.grid.lows + np.asarray(multi) * self.grid.widths
            hi = lo + self.grid.widths
            probs[j] = _mvn_box_mass(mvn, lo, hi)
        keep = probs > self.tol
        return np.nonzero(keep)[0].astype(np.int64), probs[keep]

    def out_masses(self, u_idx):
        """Exact probability of leaving the grid per state."""
        G = self.means_grid_units(u_idx)
        inside = np.ones(self.grid.n_cells)
        for d in range(self.grid.dims):
            if self.sigma[d] <= 0.0:
                cell = np.floor(G[:, d] + 0.5)
                inside *= ((cell >= 0) & (cell < self.grid.counts[d]))
                continue
            scale = self.grid.widths[d] / self.sigma[d]
            hi = ndtr((self.grid.counts[d] - 0.5 - G[:, d]) * scale)
            lo = ndtr((-0.5 - G[:, d]) * scale)
            inside *= hi - lo
        return 1.0 - inside

    def row_masses(self, u_idx):
        """Probability mass kept on the grid per state (after truncation)."""
        return self.expected_value(np.ones(self.grid.n_cells), u_idx)

    # -- DP kernel -------------------------------------------------------------

    def expected_value(self, W, u_idx):
        """E[W(next state)] per state under one input; lost mass counts 0."""
        W = np.asarray(W, dtype=float)
        if self.dense_noise:
            out = np.empty(self.grid.n_cells)
            for s in range(self.grid.n_cells):
                idx, pr = self.transition_row(s, u_idx)
                out[s] = pr @ W[idx]
            return out
        if self.diagonal:
            return self._expected_banded(W, u_idx)
        return self._expected_general(W, u_idx)

    # banded path: per-axis sparse operators, exact

    def _banded_ops(self, u_idx):
        if u_idx in self._banded_cache:
            return self._banded_cache[u_idx]
        A = self.A_modes[0]
        shift = self.B_modes[0] @ self.inputs.points[u_idx] + self.a_modes[0]
        ops = []
        for d in range(self.grid.dims):
            l_d = int(self.grid.counts[d])
            c = self.grid.centers_axis(d)
            mu = A[d, d] * c + shift[d]
            g = (mu - self.grid.lows[d]) / self.grid.widths[d] - 0.5
            if self.sigma[d] <= 0.0:
                cell = np.floor(g + 0.5).astype(int)
                ok = (cell >= 0) & (cell < l_d)
                rows = np.nonzero(ok)[0]
                op = scipy.sparse.csr_matrix(
                    (np.ones(rows.size), (rows, cell[ok])), shape=(l_d, l_d))
                ops.append(op)
                continue
            rad = int(self.radius[d])
            base = np.floor(g + 0.5).astype(int)
            offs = np.arange(-rad, rad + 1)
            cols = base[:, None] + offs[None, :]
            vals = _axis_entries(cols - g[:, None], self.grid.widths[d],
                                 self.sigma[d])
            rows = np.repeat(np.arange(l_d), offs.size)
            cols = cols.ravel()
            vals = vals.ravel()
            ok = (cols >= 0) & (cols < l_d)
            op = scipy.sparse.csr_matrix(
                (vals[ok], (rows[ok], cols[ok])), shape=(l_d, l_d))
            ops.append(op)
        if len(self._banded_cache) < 64:
            self._banded_cache[u_idx] = ops
        return ops

    def _expected_banded(self, W, u_idx):
        ops = self._banded_ops(u_idx)
        V = W.reshape(tuple(self.grid.counts))
        for d in range(self.grid.dims):
            V = np.moveaxis(V, d, 0)
            shp = V.shape
            V = ops[d] @ np.ascontiguousarray(V).reshape(shp[0], -1)
            V = np.moveaxis(V.reshape(shp), 0, d)
        return np.ascontiguousarray(V).ravel()

    # general path: upsampled smoothing along the last axis, then a
    # bucketed per-state gather along the leading axis

    def _general_setup(self, u_idx):
        key = u_idx
        if key in self._general_cache:
            return self._general_cache[key]
        if self.grid.dims > 2:
            raise DimensionMismatch(
                "general-dynamics DP path supports up to two dimensions")
        G = self.means_grid_units(u_idx)
        setup = {}
        if self.grid.dims == 1:
            rad = int(self.radius[0])
            base = np.floor(G[:, 0] + 0.5).astype(int)
            phi = G[:, 0] - base
            setup.update(base0=base, phi0=phi, rad0=rad)
        else:
            l1 = int(self.grid.counts[1])
            rad0, rad1 = int(self.radius[0]), int(self.radius[1])
            fine = int(FINE_MEMORY_BUDGET // max(
                1, (self.grid.counts[0] * 8 * (l1 + 2 * rad1 + 6))))
            fine = int(min(KERNEL_BUCKETS, max(4, fine)))
            margin1 = rad1 + 2
            stuff_len = fine * (l1 + 2 * margin1)
            kern_half = (rad1 + 1) * fine
            offs = np.arange(-kern_half, kern_half + 1, dtype=float) / fine
            kf = _axis_entries(offs, self.grid.widths[1], self.sigma[1])
            conv_len = next_fast_len(stuff_len + kf.size - 1)
            base0 = np.floor(G[:, 0] + 0.5).astype(int)
            phi0 = G[:, 0] - base0
            # fractional fine-grid position along axis 1 for each state
            pos1 = (G[:, 1] + margin1) * fine + kern_half
            # bucketed kernel table for axis 0
            nb = KERNEL_BUCKETS
            buckets = np.linspace(-0.5, 0.5, nb + 1)
            s0 = np.arange(-rad0, rad0 + 1)
            tab = _axis_entries(s0[None, :] - buckets[:, None],
                                self.grid.widths[0], self.sigma[0])
            setup.update(fine=fine, margin1=margin1, stuff_len=stuff_len,
                         kf_fft=np.fft.rfft(kf, conv_len), conv_len=conv_len,
                         kern_half=kern_half, base0=base0, phi0=phi0,
                         pos1=pos1, tab=tab, rad0=rad0, rad1=rad1)
        if len(self._general_cache) < 16:
            self._general_cache[key] = setup
        return setup

    def _expected_general(self, W, u_idx):
        s = self._general_setup(u_idx)
        if self.grid.dims == 1:
            base, phi, rad = s["base0"], s["phi0"], s["rad0"]
            offs = np.arange(-rad, rad + 1)
            l0 = int(self.grid.counts[0])
            cols = base[:, None] + offs[None, :]
            vals = _axis_entries(cols - (base + phi)[:, None],
                                 self.grid.widths[0], self.sigma[0])
            ok = (cols >= 0) & (cols < l0)
            return np.einsum("ij,ij->i", vals * ok, W[np.clip(cols, 0, l0 - 1)])
        l0, l1 = (int(c) for c in self.grid.counts)
        fine = s["fine"]
        margin1 = s["margin1"]
        V = W.reshape(l0, l1)
        stuffed = np.zeros((l0, s["stuff_len"]))
        stuffed[:, margin1 * fine::fine][:, :l1] = V
        Sm = np.fft.irfft(np.fft.rfft(stuffed, s["conv_len"], axis=1)
                          * s["kf_fft"][None, :], s["conv_len"], axis=1)
        # pad rows so axis-0 windows never leave the array
        rad0 = s["rad0"]
        pad0 = rad0 + 1
        Smp = np.zeros((l0 + 2 * pad0, Sm.shape[1] + 1))
        Smp[pad0:pad0 + l0, :Sm.shape[1]] = Sm
        zero_col = Sm.shape[1]  # sentinel column of zeros

        base0 = s["base0"]
        phi0 = s["phi0"]
        pos1 = s["pos1"]
        tab = s["tab"]
        nb = tab.shape[0] - 1
        out = np.empty(self.grid.n_cells)
        offs0 = np.arange(-rad0, rad0 + 1)
        chunk = max(1, int(4e6 // (offs0.size + 1)))
        for start in range(0, self.grid.n_cells, chunk):
            end = min(start + chunk, self.grid.n_cells)
            b0 = base0[start:end]
            rows = np.clip(b0[:, None] + offs0[None, :] + pad0,
                           0, l0 + 2 * pad0 - 1)
            dead0 = (b0 < -rad0) | (b0 >= l0 + rad0)
            # axis-0 kernel via bucket interpolation
            bf = (phi0[start:end] + 0.5) * nb
            bi = np.clip(bf.astype(int), 0, nb - 1)
            bt = (bf - bi)[:, None]
            k0 = (1.0 - bt) * tab[bi] + bt * tab[bi + 1]
            # axis-1 smoothed values via linear interpolation on the fine grid
            p = pos1[start:end]
            pi = np.floor(p).astype(int)
            valid = (pi >= 0) & (pi + 1 < zero_col)
            pi_safe = np.where(valid, pi, zero_col - 1)
            pt = np.where(valid, p - pi, 0.0)[:, None]
            left = Smp[rows, np.where(valid, pi_safe, zero_col)[:, None]]
            right = Smp[rows, np.where(valid, pi_safe + 1, zero_col)[:, None]]
            vals = (1.0 - pt) * left + pt * right
            res = np.einsum("ij,ij->i", k0, vals)
            res[dead0] = 0.0
            out[start:end] = res
        return out

    # -- binary dump -----------------------------------------------------------

    MAGIC = b"STSYTEN1"

    def save(self, path):
        """Binary dump of the deterministic shift and kernel data.

        Little-endian: magic, dims, counts, bounds, inputs, tolerance,
        sigma, mode count, per-mode (A, B, a), mode ids.
        """
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            d = self.grid.dims
            n_modes = self.A_modes.shape[0]
            m = self.B_modes.shape[2]
            fh.write(struct.pack("<4i", d, int(self.inputs.n_inputs),
                                 n_modes, m))
            fh.write(np.asarray(self.grid.counts, "<i8").tobytes())
            fh.write(np.asarray(self.grid.lows, "<f8").tobytes())
            fh.write(np.asarray(self.grid.highs, "<f8").tobytes())
            fh.write(struct.pack("<d", self.tol))
            fh.write(np.asarray(self.sigma, "<f8").tobytes())
            fh.write(np.asarray(self.inputs.points, "<f8").tobytes())
            fh.write(np.asarray(self.A_modes, "<f8").tobytes())
            fh.write(np.asarray(self.B_modes, "<f8").tobytes())
            fh.write(np.asarray(self.a_modes, "<f8").tobytes())
            fh.write(np.asarray(self.mode_ids, "<i8").tobytes())

    @classmethod
    def load_header(cls, path):
        """Read back the dump header (shape information only)."""
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != cls.MAGIC:
                raise ValueError("not a tensor dump")
            d, n_inputs, n_modes, m = struct.unpack("<4i", fh.read(16))
            counts = np.frombuffer(fh.read(8 * d), "<i8")
            lows = np.frombuffer(fh.read(8 * d), "<f8")
            highs = np.frombuffer(fh.read(8 * d), "<f8")
            tol, = struct.unpack("<d", fh.read(8))
        return {"dims": d, "n_inputs": n_inputs, "n_modes": n_modes,
                "m": m, "counts": counts, "lows": lows, "highs": highs,
                "tol": tol}


def _mvn_box_mass(mvn, lo, hi):
    """Rectangle probability by inclusion-exclusion over corners."""
    d = lo.size
    total = 0.0
    for mask in range(1 << d):
        corner = np.where([(mask >> k) & 1 for k in range(d)], lo, hi)
        sign = (-1) ** bin(mask).count("1")
        total += sign * mvn.cdf(corner)
    return max(total, 0.0)


class AbstractModel:
    """Grid abstraction: states, inputs, factored kernel, labels.

    ``def_mask``/``unc_mask`` (filled by :func:`label_sets`) give, per
    abstract state, the APs that certainly hold within the deviation bound
    and those that are uncertain; the letter set of a state is
    ``{def | s : s subseteq unc}``.
    """

    def __init__(self, model, grid, inputs, tol):
        self.model = model
        self.grid = grid
        self.inputs = inputs
        self.tensor = AbstractionTensor(model, grid, inputs, tol)
        C = model.C
        self.outputs = grid.centers() @ C.T
        self.mode_ids = self.tensor.mode_ids
        self.def_mask = None
        self.unc_mask = None
        self.label_epsilon = None

    @property
    def n_states(self):
        return self.grid.n_cells

    @property
    def n_inputs(self):
        return self.inputs.n_inputs

    def state_of(self, x):
        return self.grid.index(x)


def build_abstraction(model, grid, inputs, tol):
    """Convenience constructor mirroring the pipeline call order."""
    return AbstractModel(model, grid, inputs, tol)


def label_sets(abs_model, labeling, eps):
    """Per-state letter sets robust to an output deviation of eps.

    An AP is possibly true at an abstract output if some region carrying it
    is within eps; it is certainly true if the output lies in a region
    eroded by eps. The letter set is the product of per-AP possibilities
    and always contains the true letter of the abstract output.
    """
    if eps < 0:
        raise ValueError("deviation bound must be nonnegative")
    Y = abs_model.outputs
    n = Y.shape[0]
    n_aps = labeling.n_aps
    def_mask = np.zeros(n, dtype=np.int64)
    unc_mask = np.zeros(n, dtype=np.int64)
    for i, ap in enumerate(labeling.ap_names):
        regions = labeling._by_ap.get(ap, ())
        possible = np.zeros(n, dtype=bool)
        certain = np.zeros(n, dtype=bool)
        for poly in regions:
            dist = poly.signed_distance_many(Y)
            possible |= dist <= eps
            eroded = poly.erode(eps)
            if eroded is not None:
                certain |= eroded.contains_many(Y)
        def_mask |= np.where(certain, 1 << i, 0)
        unc_mask |= np.where(possible & ~certain, 1 << i, 0)
    abs_model.def_mask = def_mask
    abs_model.unc_mask = unc_mask
    abs_model.label_epsilon = float(eps)
    return def_mask, unc_mask
