"""Quantification of (epsilon, delta) simulation relations.

A relation holds the pair of models within a weighted-norm ball of radius
epsilon except with per-step probability delta. Certification is built
from three self-contained ingredients: a Lyapunov-type contraction of the
error dynamics in a common weighting D, a closed-form invariance margin for
the delta = 0 fast path, and a maximal-coupling bound 2 Phi(||gamma||/2) - 1
for the probability that a mean shift of gamma between the coupled noises
breaks the invariance. All bounds are conservative: they can understate the
achievable guarantee but never overstate it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import ndtr

from .errors import IncompatibleWeighting, Infeasible, NoCommonD
from .mor import solve_dare
from .models import PwaModel

LAMBDA_TOL = 1e-6
DELTA_TOL = 1e-6

# Probe-state fractions of the lower/upper state bounds used to seed the
# weighting-matrix search ('l' scales the lower bound, 'u' the upper).
PROBE_PATTERN = (
    (("l", 1 / 8), ("u", 6 / 10)),
    (("u", 5 / 7), ("u", 5 / 17)),
    (("u", 2 / 13), ("l", 5 / 9)),
    (("l", 3 / 4), ("l", 1 / 7)),
)


@dataclass
class SimulationRelation:
    """Certified coupling between a model and its abstraction.

    ``epsilon`` bounds the weighted state deviation, ``epsilon_out`` the
    Euclidean output deviation it implies (what robust labeling consumes).
    ``delta`` is the per-step decoupling probability, a scalar or a
    per-mode array for PWA systems.
    """
    D: np.ndarray
    epsilon: float
    epsilon_out: float
    delta: object
    lam: float
    kind: str = "finite-state"   # finite-state | mor | combined
    interface: int = 0
    beta_max: float = 0.0
    gamma_max: float = 0.0
    xi: float = None             # maintained invariant radius (<= epsilon)
    K: np.ndarray = None         # feedback of interface option 1
    K_scale: float = 1.0
    K_mor: np.ndarray = None
    P: np.ndarray = None
    Q: np.ndarray = None
    F: np.ndarray = None
    parts: tuple = None          # (mor_relation, fs_relation) when combined

    @property
    def delta_max(self):
        return float(np.max(self.delta))

    def delta_for_states(self, mode_ids):
        """Per-abstract-state delta vector."""
        if np.isscalar(self.delta) or np.ndim(self.delta) == 0:
            return np.full(len(mode_ids), float(self.delta))
        return np.asarray(self.delta)[mode_ids]

    def membership(self, x_hat, x):
        """True when the pair lies inside the relation ball."""
        e = np.asarray(x, float) - np.asarray(x_hat, float)
        return float(e @ self.D @ e) <= self.epsilon ** 2 + 1e-12

    def weighted_norm(self, e):
        e = np.asarray(e, float)
        return float(np.sqrt(max(e @ self.D @ e, 0.0)))

    def to_dict(self):
        def arr(x):
            return None if x is None else np.asarray(x).tolist()
        return {
            "kind": self.kind, "interface": self.interface,
            "epsilon": self.epsilon, "epsilon_out": self.epsilon_out,
            "delta": arr(self.delta) if np.ndim(self.delta) else float(self.delta),
            "lam": self.lam, "beta_max": self.beta_max,
            "gamma_max": self.gamma_max, "xi": self.xi,
            "D": arr(self.D), "K": arr(self.K), "K_scale": self.K_scale,
            "K_mor": arr(self.K_mor), "P": arr(self.P), "Q": arr(self.Q),
            "F": arr(self.F),
            "parts": [p.to_dict() for p in self.parts] if self.parts else None,
        }

    @classmethod
    def from_dict(cls, data):
        def arr(x):
            return None if x is None else np.asarray(x, dtype=float)
        parts = data.get("parts")
        delta = data["delta"]
        if isinstance(delta, list):
            delta = np.asarray(delta)
        return cls(D=arr(data["D"]), epsilon=data["epsilon"],
                   epsilon_out=data["epsilon_out"], delta=delta,
                   lam=data["lam"], kind=data["kind"],
                   interface=data["interface"], beta_max=data["beta_max"],
                   gamma_max=data["gamma_max"], xi=data.get("xi"),
                   K=arr(data["K"]), K_scale=data.get("K_scale", 1.0),
                   K_mor=arr(data["K_mor"]), P=arr(data["P"]),
                   Q=arr(data["Q"]), F=arr(data["F"]),
                   parts=tuple(cls.from_dict(p) for p in parts) if parts else None)


# ---------------------------------------------------------------------------
# Weighting matrices


def _closed_loop_modes(model, K=None):
    if isinstance(model, PwaModel):
        mats = [(mo.A, mo.B) for mo in model.modes]
    else:
        mats = [(model.A, model.B)]
    if K is None:
        return [A for A, _ in mats]
    K = np.asarray(K)
    if K.ndim == 3:  # one feedback gain per PWA mode
        return [A + B @ K[i] for i, (A, B) in enumerate(mats)]
    return [A + B @ K for A, B in mats]


def contraction_factor(Abar, D):
    """Smallest c with ||Abar e||_D <= c ||e||_D for all e."""
    M = Abar.T @ D @ Abar
    vals = scipy.linalg.eigh(M, D, eigvals_only=True)
    return float(np.sqrt(max(vals.max(), 0.0)))


def _lyapunov_weighting(Abar, lam):
    n = Abar.shape[0]
    scaled = Abar / lam
    if np.max(np.abs(np.linalg.eigvals(scaled))) >= 1.0 - 1e-12:
        return None
    D = scipy.linalg.solve_discrete_lyapunov(scaled.T, np.eye(n))
    return 0.5 * (D + D.T)


def default_probes(X, count=5):
    """Probe states spread over the state box (pattern plus the center)."""
    lows, highs = X.bounds
    n = lows.size
    probes = []
    for pattern in PROBE_PATTERN[:max(0, count - 1)]:
        x = np.empty(n)
        for d in range(n):
            side, frac = pattern[d % len(pattern)]
            x[d] = frac * (lows[d] if side == "l" else highs[d])
        probes.append(x)
    probes.append(0.5 * (lows + highs))
    return np.array(probes)


def _batch_contraction(Abars, D):
    """Certified D-norm contraction factor of every mode at once."""
    L = np.linalg.cholesky(D + 1e-15 * np.eye(D.shape[0]))
    Linv = np.linalg.inv(L.T)  # D = L L', transform e -> L' e
    T = np.einsum("ij,njk,kl->nil", L.T, Abars, Linv)
    return np.linalg.norm(T, ord=2, axis=(1, 2))


def compute_weighting(model, interface=0, K=None, probes=None):
    """Common weighting D contracting the (closed-loop) dynamics.

    Lyapunov solutions at the probe states are averaged and the result is
    validated against every mode; modes that defeat the candidate are added
    to the probe set until the certificate closes, and the contraction
    level is then tightened by bisection. D is normalized to unit maximum
    eigenvalue. Raises NoCommonD when no single weighting contracts all
    modes.
    """
    Abars = np.stack(_closed_loop_modes(model, K))
    if probes is None:
        probes = default_probes(model.X) if model.X is not None \
            else np.zeros((1, model.n))
    if isinstance(model, PwaModel):
        seed = sorted({model.mode_index(x) for x in np.atleast_2d(probes)})
    else:
        seed = list(range(Abars.shape[0]))
    rho_all = np.max(np.abs(np.linalg.eigvals(Abars)), axis=1)
    if rho_all.max() >= 1.0:
        raise NoCommonD("some local dynamics are not strictly stable; "
                        "refine the PWA partition or add feedback")
    members = list(seed)

    def build(lam):
        Ds = []
        for i in members:
            D = _lyapunov_weighting(Abars[i], lam)
            if D is None:
                return None
            Ds.append(D / scipy.linalg.eigh(D, eigvals_only=True)[-1])
        D = sum(Ds) / len(Ds)
        return D / scipy.linalg.eigh(D, eigvals_only=True)[-1]

    best = None
    for _ in range(60):
        rho = rho_all[members].max()
        found = None
        for frac in (0.02, 0.1, 0.3, 0.6, 0.9):
            lam = rho + frac * (1.0 - rho)
            D = build(lam)
            if D is None:
                continue
            certs = _batch_contraction(Abars, D)
            if certs.max() < 1.0 - 1e-9:
                found = (lam, D)
                break
            worst = int(np.argmax(certs))
        if found is not None:
            best = found
            break
        if worst in members:
            members.append(int(np.argmax(
                np.where(np.isin(np.arange(len(Abars)), members), -1.0, certs))))
        else:
            members.append(worst)
    if best is None:
        raise NoCommonD("no common weighting contracts every mode; "
                        "refine the PWA partition")

    # Polish: bisect the build level for the tightest certified contraction.
    lam_best, D_best = best
    cert_best = _batch_contraction(Abars, D_best).max()
    lo, hi = rho_all[members].max() + 1e-9, lam_best
    while hi - lo > LAMBDA_TOL:
        mid = 0.5 * (lo + hi)
        D_mid = build(mid)
        if D_mid is None:
            lo = mid
            continue
        cert = _batch_contraction(Abars, D_mid).max()
        if cert <= mid:
            if cert < cert_best:
                D_best, cert_best = D_mid, cert
            hi = mid
        else:
            lo = mid
    return D_best


# ---------------------------------------------------------------------------
# Finite-state relation


def _box_norm_max(half_widths, D):
    """max ||v||_D over vertices of the box with given half widths."""
    n = len(half_widths)
    best = 0.0
    for signs in itertools.product((-1.0, 1.0), repeat=n):
        v = np.asarray(signs) * half_widths
        best = max(best, float(v @ D @ v))
    return float(np.sqrt(best))


def _noise_gain(B_w, D):
    """max_{||s||_D <= 1} ||pinv(B_w) s||: shift needed per unit residual."""
    pinv = np.linalg.pinv(B_w)
    return float(np.linalg.norm(pinv @ _mat_isqrt(D), 2)), pinv


def _range_basis(M, tol=1e-10):
    """Orthonormal basis of range(M) and the pseudo-inverse, or None."""
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    rank = int(np.sum(s > tol * max(s[0], 1e-300)))
    if rank == 0:
        return None, np.linalg.pinv(M)
    return U[:, :rank], np.linalg.pinv(M)


def _quadform_tail(nus, threshold):
    """Chernoff bound on P(sum nu_i z_i^2 > threshold), z_i iid N(0,1).

    Minimizes exp(-theta t) / prod sqrt(1 - 2 theta nu_i) over the admissible
    theta; exact enough for certificates and always an upper bound.
    """
    nus = np.asarray(nus, dtype=float)
    nu_max = float(nus.max(initial=0.0))
    if nu_max < 1e-30:
        return 0.0
    mean = float(nus.sum())
    if threshold <= mean:
        return 1.0

    def log_bound(theta):
        return -theta * threshold - 0.5 * np.sum(np.log1p(-2.0 * theta * nus))

    hi = (1.0 - 1e-9) / (2.0 * nu_max)
    theta, _ = _golden_min(log_bound, 0.0, hi, tol=hi * 1e-8)
    return float(min(1.0, np.exp(log_bound(theta))))


def _mat_isqrt(D):
    vals, vecs = np.linalg.eigh(D)
    vals = np.clip(vals, 1e-15, None)
    return (vecs / np.sqrt(vals)) @ vecs.T


def _mat_sqrt(D):
    vals, vecs = np.linalg.eigh(D)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def output_gain(C, D):
    """Factor mapping the D-ball onto Euclidean output deviations."""
    vals = scipy.linalg.eigh(C.T @ C, D, eigvals_only=True)
    top = float(max(vals))
    if not np.isfinite(top):
        raise IncompatibleWeighting("weighting is singular along the output map")
    return float(np.sqrt(max(top, 0.0)))


def _output_normalized(D, C):
    """Rescale D so the D-ball of radius r maps into the output r-ball.

    Contraction factors are scale invariant, so this only changes what the
    relation radius means: it becomes a Euclidean output deviation.
    """
    return D * output_gain(C, D) ** 2


def _golden_min(fun, lo, hi, tol=DELTA_TOL):
    """Golden-section minimizer for a unimodal scalar function."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    return x, fun(x)


def coupling_delta(gamma_norm):
    """Total-variation bound of the maximal coupling of N(0, I) and
    N(gamma, I): 2 Phi(||gamma|| / 2) - 1."""
    return float(2.0 * ndtr(gamma_norm / 2.0) - 1.0)


def quantify_sim(model, abs_model, eps, interface=0, D=None, probes=None):
    """Certify the minimal per-step deviation delta for a given epsilon.

    ``eps`` bounds the Euclidean output deviation: the weighting is scaled
    so the relation ball of radius eps maps into the output eps-ball.
    Fast path: when the contracted error plus the grid-quantization offset
    stays inside the epsilon ball, the identity noise coupling never breaks
    the relation and delta = 0. Otherwise the abstract noise is shifted
    just enough to restore invariance and delta is the maximal-coupling
    price of that shift, minimized over the maintained invariant radius.
    PWA models get one delta per mode.
    """
    if eps <= 0:
        raise Infeasible("output deviation bound must be positive",
                         epsilon_min=None)
    K = None
    K_scale = 1.0
    if interface == 1:
        K, K_scale, D = _feedback_and_weighting(model, abs_model, eps, D,
                                                probes=probes)
        if isinstance(model, PwaModel):
            for i, mo in enumerate(model.modes):
                mo.K_fb = K[i]
    elif D is None:
        D = _output_normalized(
            compute_weighting(model, interface=0, probes=probes), model.C)
    else:
        D = _output_normalized(np.asarray(D, float), model.C)
    Abars = _closed_loop_modes(model, K)
    lams = np.array([contraction_factor(A, D) for A in Abars])
    half_cell = 0.5 * abs_model.grid.widths
    if isinstance(model, PwaModel):
        betas = np.empty(len(Abars))
        for i, mo in enumerate(model.modes):
            k_lo, k_hi = mo.K.bounds
            k_half = np.maximum(np.abs(k_lo), np.abs(k_hi))
            betas[i] = _box_norm_max(half_cell + k_half, D)
        B_w = model.modes[0].B_w
    else:
        betas = np.array([_box_norm_max(half_cell, D)])
        B_w = model.B_w
    beta_quant = _box_norm_max(half_cell, D)
    lam_max = float(lams.max())
    beta_max = float(betas.max())

    gaps_at_eps = lams * eps + betas - eps
    if np.all(gaps_at_eps <= 1e-12):
        delta = np.zeros(len(Abars)) if isinstance(model, PwaModel) else 0.0
        return SimulationRelation(
            D=D, epsilon=float(eps), epsilon_out=float(eps * output_gain(model.C, D)),
            delta=delta, lam=lam_max, kind="finite-state", interface=interface,
            beta_max=beta_max, gamma_max=0.0, xi=float(eps), K=K, K_scale=K_scale)

    # Shifted coupling: the residual must be realizable through the noise.
    n = D.shape[0]
    if beta_quant > eps:
        raise Infeasible(
            "grid quantization exceeds the deviation bound; refine the grid",
            epsilon_min=float(beta_quant))
    if np.linalg.matrix_rank(B_w, tol=1e-12) < n:
        eps_min = np.inf
        if lam_max < 1.0:
            eps_min = float(beta_max / (1.0 - lam_max))
        raise Infeasible("residual outside the noise range: no coupling "
                         "can absorb the invariance gap", epsilon_min=eps_min)
    cnoise, _ = _noise_gain(B_w, D)

    def worst_delta(xi):
        gaps = np.maximum(0.0, lams * xi + betas - xi)
        return float(np.max(2.0 * ndtr(cnoise * gaps / 2.0) - 1.0))

    xi_lo = min(beta_quant, eps)
    xi_star, _ = _golden_min(worst_delta, xi_lo, eps)
    gaps = np.maximum(0.0, lams * xi_star + betas - xi_star)
    deltas = 2.0 * ndtr(cnoise * gaps / 2.0) - 1.0
    gamma_max = float(cnoise * gaps.max())
    delta = deltas if isinstance(model, PwaModel) else float(deltas[0])
    return SimulationRelation(
        D=D, epsilon=float(eps), epsilon_out=float(eps * output_gain(model.C, D)),
        delta=delta, lam=lam_max, kind="finite-state", interface=interface,
        beta_max=beta_max, gamma_max=gamma_max, xi=float(xi_star),
        K=K, K_scale=K_scale)


def _feedback_and_weighting(model, abs_model, eps, D, probes=None):
    """Feedback of interface option 1, scaled into the reserved budget.

    Linear models get one Riccati gain; PWA models get one per mode (each
    affine piece carries its own interface function).
    """
    feedback_box = abs_model.inputs.feedback
    if feedback_box is None:
        raise Infeasible("no feedback budget was reserved when gridding the "
                         "input space", epsilon_min=None)
    _, budget = feedback_box.bounds
    Qc_of = lambda C: C.T @ C + 1e-9 * np.eye(C.shape[1])
    if isinstance(model, PwaModel):
        K_raw = np.stack([
            solve_dare(mo.A, mo.B, Qc_of(model.C), np.eye(model.m))[1]
            for mo in model.modes])
    else:
        K_raw = solve_dare(model.A, model.B, Qc_of(model.C),
                           np.eye(model.m))[1]
    K = K_raw
    scale = 1.0
    # The budget check needs D, which depends on K; iterate until the final
    # (K, D) pair verifies. PWA gains are scaled per mode; a mode scaled
    # below what stabilizes it surfaces as NoCommonD (epsilon too large for
    # the reserved budget).
    D = None
    C = model.C
    for _ in range(8):
        D = _output_normalized(
            compute_weighting(model, interface=1, K=K, probes=probes), C)
        D_isqrt = _mat_isqrt(D)
        rows = np.asarray(K) @ D_isqrt
        worst = eps * np.linalg.norm(rows, axis=-1)
        if np.all(worst.reshape(-1, worst.shape[-1]).max(axis=0)
                  <= budget + 1e-12):
            break
        rows_raw = np.asarray(K_raw) @ D_isqrt
        worst_raw = eps * np.linalg.norm(rows_raw, axis=-1)
        with np.errstate(divide="ignore"):
            per_row = np.where(worst_raw > 0, budget / worst_raw, np.inf)
        if per_row.ndim == 2:  # one scale per PWA mode
            scale = np.minimum(1.0, 0.98 * per_row.min(axis=1))
            K = scale[:, None, None] * K_raw
            scale = float(scale.min())
        else:
            scale = float(min(1.0, 0.98 * per_row.min()))
            K = scale * K_raw
    return K, scale, D


# ---------------------------------------------------------------------------
# Reduced-order relation


def quantify_sim_mor(full, pair, eps_r, D_r=None, u_box=None):
    """Relation between a full model and its reduction on e = x - P x_r.

    The interface is u = u_r + Q x_r + K_mor e with K_mor a Riccati
    feedback; the reduced disturbance is coupled as w_r = w + F e. F trades
    faster error contraction against the coupling price of its shift; the
    trade-off knob is optimized by scalar search. The returned epsilon is
    an output deviation (D_r is scaled so the D_r-ball maps into the
    Euclidean output ball).
    """
    if pair.P is None or pair.Q is None:
        raise ValueError("run compute_projection before quantify_sim_mor")
    A, B, B_w, C = full.A, full.B, full.B_w, full.C
    P, Q = pair.P, pair.Q
    red = pair.reduced
    Qc = C.T @ C + 1e-9 * np.eye(full.n)
    _, K_mor = solve_dare(A, B, Qc, np.eye(full.m))
    PBrw = P @ red.B_w
    F_ls, *_ = np.linalg.lstsq(PBrw, A + B @ K_mor, rcond=None)
    N = B_w - PBrw  # noise-channel mismatch hit by the shared disturbance

    drift_A = P @ red.A - A @ P - B @ Q  # lstsq residual of the Q fit
    X_r = red.X
    u_box = u_box if u_box is not None else (red.U or full.U)

    # Drift vectors split into the part the noise shift can absorb (the
    # range of P B_rw) and a residual that must fit the contraction margin.
    basis, pinv_PBrw = _range_basis(PBrw)

    def _drift_terms(D, Dsq, use_shift):
        resid = 0.0
        absorb = 0.0
        vectors = []
        if X_r is not None:
            vectors.extend(drift_A @ v for v in X_r.vertices())
        if u_box is not None:
            dB = B - P @ red.B
            vectors.extend(dB @ v for v in u_box.vertices())
        for w in vectors:
            if use_shift and basis is not None:
                w_in = basis @ (basis.T @ w)
                w_out = w - w_in
                absorb = max(absorb, float(np.linalg.norm(pinv_PBrw @ w_in)))
            else:
                w_out = w
            resid = max(resid, float(np.linalg.norm(Dsq @ w_out)))
        return resid, absorb

    def evaluate(t, D, A_cl):
        lam = contraction_factor(A_cl, D)
        if lam >= 1.0:
            return None
        Dsq = _mat_sqrt(D)
        best = None
        for use_shift in (False, True):
            drift_resid, drift_shift = _drift_terms(D, Dsq, use_shift)
            margin = eps_r * (1.0 - lam) - drift_resid
            if margin <= 0:
                continue
            # Tail of the unmatched noise in the D norm.
            M = N.T @ D @ N
            nus = np.clip(np.linalg.eigvalsh(M), 0.0, None)
            d_tail = _quadform_tail(nus, margin ** 2)
            shift = t * eps_r * np.linalg.norm(F_ls @ _mat_isqrt(D), 2) \
                + drift_shift
            d_shift = coupling_delta(shift)
            cand = {"delta": d_shift + d_tail, "lam": lam, "D": D,
                    "shift": shift, "drift": drift_resid, "t": t}
            if best is None or cand["delta"] < best["delta"]:
                best = cand
        return best

    def certificate(t):
        A_cl = A + B @ K_mor - t * (PBrw @ F_ls)
        rho = float(np.max(np.abs(np.linalg.eigvals(A_cl))))
        if rho >= 1.0:
            return None
        best = None
        n = A_cl.shape[0]
        for frac in (0.05, 0.15, 0.3, 0.5, 0.75, 0.9):
            lam_build = rho + frac * (1.0 - rho)
            scaled = (A_cl / lam_build).T
            if np.max(np.abs(np.linalg.eigvals(scaled))) >= 1.0 - 1e-12:
                continue
            # eta = 1 is the plain Lyapunov weighting; smaller eta weights
            # observable directions, discounting drift the output cannot see.
            for eta in (1.0, 1e-2, 1e-4, 1e-6):
                Qw = C.T @ C + eta * np.eye(n)
                D = scipy.linalg.solve_discrete_lyapunov(scaled, Qw)
                D = 0.5 * (D + D.T)
                D = D / scipy.linalg.eigh(D, eigvals_only=True)[-1]
                gain = output_gain(C, D)
                D = D * gain ** 2  # ||e||_D <= eps now implies ||C e|| <= eps
                cert = evaluate(t, D, A_cl)
                if cert is not None and (best is None
                                         or cert["delta"] < best["delta"]):
                    best = cert
        return best

    candidates = [c for c in (certificate(t) for t in np.linspace(0, 1, 11))
                  if c is not None]
    if not candidates:
        raise Infeasible("no coupling certifies the requested reduced-order "
                         "deviation", epsilon_min=None)
    coarse_best = min(candidates, key=lambda c: c["delta"])
    t0 = coarse_best["t"]
    lo, hi = max(0.0, t0 - 0.1), min(1.0, t0 + 0.1)

    def objective(t):
        cert = certificate(t)
        return cert["delta"] if cert is not None else 2.0

    t_star, _ = _golden_min(objective, lo, hi, tol=1e-3)
    best = certificate(t_star)
    if best is None or best["delta"] > coarse_best["delta"]:
        best = coarse_best
    F = best["t"] * F_ls
    out_resid = 0.0
    if X_r is not None:
        CPr = C @ P - red.C
        out_resid = max((np.linalg.norm(CPr @ v) for v in X_r.vertices()),
                        default=0.0)
    return SimulationRelation(
        D=best["D"], epsilon=float(eps_r),
        epsilon_out=float(eps_r + out_resid),
        delta=float(min(best["delta"], 1.0)), lam=best["lam"], kind="mor",
        interface=1, beta_max=best["drift"], gamma_max=best["shift"],
        xi=float(eps_r), K_mor=K_mor, P=P, Q=Q, F=F)


def combine_relations(r1, r2):
    """Stack a reduced-order relation with a finite-state relation.

    Output deviations add (each epsilon is already an output bound, so the
    norm-equivalence constant is folded in); deviation probabilities add by
    the union bound. Membership goes through the intermediate reduced state,
    which the combined relation keeps from its parts.
    """
    if r1.kind != "mor" or r2.kind not in ("finite-state",):
        raise IncompatibleWeighting(
            "combination expects a reduced-order relation and a finite-state "
            "relation")
    if not (np.isfinite(r1.epsilon_out) and np.isfinite(r2.epsilon_out)):
        raise IncompatibleWeighting("unbounded output deviation")
    delta = r2.delta + r1.delta if np.ndim(r2.delta) else r1.delta + r2.delta
    return SimulationRelation(
        D=r2.D, epsilon=r2.epsilon,
        epsilon_out=float(r1.epsilon_out + r2.epsilon_out),
        delta=delta, lam=max(r1.lam, r2.lam), kind="combined",
        interface=r2.interface, beta_max=max(r1.beta_max, r2.beta_max),
        gamma_max=r1.gamma_max + r2.gamma_max, xi=r2.xi,
        K=r2.K, K_scale=r2.K_scale, K_mor=r1.K_mor, P=r1.P, Q=r1.Q, F=r1.F,
        parts=(r1, r2))
