"""Model-order reduction by balanced truncation of a pre-stabilized loop.

The full model is first stabilized with a Riccati feedback, the closed-loop
Gramians (with the noise gain as an extra input channel) are balanced, and
the leading Hankel directions are kept. The lift matrix P and input-shift Q
make the reduced model consistent with the interface that maps reduced
inputs back to full inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (EmptyResult, IllConditioned, NotStabilizable,
                     RankDeficient)
from .geometry import Polytope, pre_set
from .models import LinearModel


def solve_dare(A, B, Qc, Rc, tol=1e-12, max_iter=200):
    """Discrete-time algebraic Riccati equation by structure-preserving
    doubling.

    Returns (X, F) with X the stabilizing solution and F the feedback
    u = F x, so that rho(A + B F) < 1. Raises NotStabilizable when the
    doubling iteration fails to converge or the closed loop is not stable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Qc = np.atleast_2d(np.asarray(Qc, dtype=float))
    Rc = np.atleast_2d(np.asarray(Rc, dtype=float))
    n = A.shape[0]
    Ak = A.copy()
    Gk = B @ np.linalg.solve(Rc, B.T)
    Hk = Qc.copy()
    converged = False
    for _ in range(max_iter):
        M = np.eye(n) + Gk @ Hk
        try:
            Minv = np.linalg.inv(M)
        except np.linalg.LinAlgError:
            raise NotStabilizable("doubling iteration became singular")
        with np.errstate(over="ignore", invalid="ignore"):
            A_next = Ak @ Minv @ Ak
            G_next = Gk + Ak @ Minv @ Gk @ Ak.T
            H_next = Hk + Ak.T @ Hk @ Minv @ Ak
        if not np.all(np.isfinite(H_next)):
            raise NotStabilizable("Riccati iteration diverged")
        delta = np.max(np.abs(H_next - Hk)) / max(1.0, np.max(np.abs(H_next)))
        Ak, Gk, Hk = A_next, G_next, H_next
        if delta < tol:
            converged = True
            break
    if not converged:
        raise NotStabilizable("Riccati iteration did not converge")
    X = 0.5 * (Hk + Hk.T)
    F = -np.linalg.solve(Rc + B.T @ X @ B, B.T @ X @ A)
    residual = A.T @ X @ A - X \
        - (A.T @ X @ B) @ np.linalg.solve(Rc + B.T @ X @ B, B.T @ X @ A) + Qc
    if np.max(np.abs(residual)) > 1e-9 * max(1.0, np.max(np.abs(X))):
        raise NotStabilizable("Riccati residual did not reach tolerance")
    closed = A + B @ F
    if n > 0 and np.max(np.abs(np.linalg.eigvals(closed))) >= 1.0 - 1e-12:
        raise NotStabilizable("closed loop is not strictly stable")
    return X, F


def dare_residual(A, B, Qc, Rc, X):
    """Residual of the Riccati fixed-point equation (for verification)."""
    A = np.asarray(A, float)
    B = np.atleast_2d(np.asarray(B, float))
    term = (A.T @ X @ B) @ np.linalg.solve(Rc + B.T @ X @ B, B.T @ X @ A)
    return A.T @ X @ A - X - term + Qc


@dataclass
class ReducedPair:
    """Full model, its reduction, and the data tying them together."""
    full: LinearModel
    reduced: LinearModel
    F: np.ndarray                 # pre-stabilizing feedback on the full model
    T: np.ndarray                 # balancing transform (full coordinates)
    Tinv: np.ndarray
    hankel: np.ndarray            # Hankel singular values, descending
    dimr: int
    P: np.ndarray = None          # lift, n x dimr
    Q: np.ndarray = None          # input shift, m x dimr
    lift_candidates: list = None  # [(label, P, Q)] alternatives for the lift


def _lyapunov_gramians(Ac, Bc, C):
    Wc = scipy.linalg.solve_discrete_lyapunov(Ac, Bc @ Bc.T)
    Wo = scipy.linalg.solve_discrete_lyapunov(Ac.T, C.T @ C)
    return 0.5 * (Wc + Wc.T), 0.5 * (Wo + Wo.T)


def _psd_factor(W, tol=1e-12):
    vals, vecs = np.linalg.eigh(W)
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)


def model_reduction(model, dimr, f):
    """Balanced truncation of the model pre-stabilized by a DARE feedback.

    The Riccati cost is Qc = C'C, Rc = f*I, so ``f`` trades input effort
    against output fit. Gramians include B_w as an input channel. Returns a
    ReducedPair (without projection matrices; see compute_projection).
    """
    n = model.n
    if not 1 <= dimr <= n:
        raise RankDeficient(f"target order {dimr} outside 1..{n}")
    Qc = model.C.T @ model.C
    Rc = f * np.eye(model.m)
    _, F = solve_dare(model.A, model.B, Qc, Rc)
    Ac = model.A + model.B @ F
    Bc = np.hstack([model.B, model.B_w])
    Wc, Wo = _lyapunov_gramians(Ac, Bc, model.C)
    Lc = _psd_factor(Wc)
    Lo = _psd_factor(Wo)
    U, s, Vt = np.linalg.svd(Lo.T @ Lc)
    nonzero = int(np.sum(s > 1e-12 * max(s[0], 1e-300)))
    if nonzero < dimr:
        raise RankDeficient(
            f"only {nonzero} nonzero Hankel singular values, need {dimr}")
    s_kept = s[:nonzero]
    T = Lc @ Vt[:nonzero].T @ np.diag(s_kept ** -0.5)
    Tinv = np.diag(s_kept ** -0.5) @ U[:, :nonzero].T @ Lo.T
    if nonzero < n:
        # Complete the transform on the unobservable/uncontrollable complement
        # so T stays square and invertible.
        basis = scipy.linalg.null_space(Tinv)
        T = np.hstack([T, basis])
        Tinv = np.linalg.inv(T)
    A_bal = Tinv @ model.A @ T
    B_bal = Tinv @ model.B
    Bw_bal = Tinv @ model.B_w
    C_bal = model.C @ T
    r = dimr
    reduced = LinearModel(A_bal[:r, :r], B_bal[:r], C_bal[:, :r],
                          B_w=Bw_bal[:r], mu=np.zeros(model.q),
                          Sigma=np.eye(model.q))
    hankel = np.concatenate([s_kept, np.zeros(n - nonzero)])
    return ReducedPair(full=model, reduced=reduced, F=F, T=T, Tinv=Tinv,
                       hankel=hankel, dimr=r)


def balanced_gramians(pair):
    """Gramians of the stabilized loop in balanced coordinates (diagnostic)."""
    model = pair.full
    Ac = model.A + model.B @ pair.F
    Bc = np.hstack([model.B, model.B_w])
    Wc, Wo = _lyapunov_gramians(Ac, Bc, model.C)
    Wc_b = pair.Tinv @ Wc @ pair.Tinv.T
    Wo_b = pair.T.T @ Wo @ pair.T
    return Wc_b, Wo_b


def compute_projection(pair):
    """Fill in the lift P and input shift Q of a reduced pair.

    P and Q are solved jointly from A P - P A_r = B Q with C P = C_r, so
    the lifted reduced dynamics match the full dynamics exactly up to the
    input channel; the drift the similarity quantification must absorb is
    then zero. When that linear system is singular (for example B = 0) the
    balancing lift with a least-squares Q is used instead.
    """
    r = pair.dimr
    model = pair.full
    n, m = model.n, model.m
    A, B, C = model.A, model.B, model.C
    A_r, C_r = pair.reduced.A, pair.reduced.C
    p = C.shape[0]
    # vec (column-major) unknowns [vec(P); vec(Q)]
    top = np.hstack([np.kron(np.eye(r), A) - np.kron(A_r.T, np.eye(n)),
                     -np.kron(np.eye(r), B)])
    bottom = np.hstack([np.kron(np.eye(r), C), np.zeros((p * r, m * r))])
    lhs = np.vstack([top, bottom])
    rhs = np.concatenate([np.zeros(n * r), C_r.flatten(order="F")])
    sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    P_emb = sol[:n * r].reshape((n, r), order="F")
    Q_emb = sol[n * r:].reshape((m, r), order="F")
    residual = np.linalg.norm(lhs @ sol - rhs)
    sv_emb = np.linalg.svd(P_emb, compute_uv=False)
    embedding_ok = residual <= 1e-8 and sv_emb.min() >= 1e-10

    P_bal = pair.T[:, :r].copy()
    sv_bal = np.linalg.svd(P_bal, compute_uv=False)
    Q_bal = None
    if sv_bal.min() >= 1e-12:
        target = P_bal @ A_r - A @ P_bal
        Q_bal, *_ = np.linalg.lstsq(B, target, rcond=None)

    candidates = []
    if embedding_ok:
        candidates.append(("embedding", P_emb, Q_emb))
    if Q_bal is not None:
        candidates.append(("balanced", P_bal, Q_bal))
    if not candidates:
        raise IllConditioned("lift matrix is numerically singular")
    pair.lift_candidates = candidates
    _, pair.P, pair.Q = candidates[0]
    # Output matching must hold exactly for the combined relation.
    if np.max(np.abs(model.C @ pair.P - pair.reduced.C)) > 1e-8:
        raise IllConditioned("output map of the reduction does not lift")
    return pair


def apply_lift(pair, P, Q):
    """Install one lift candidate: set P/Q and re-derive consistent gains."""
    pair.P = np.asarray(P, float)
    pair.Q = np.asarray(Q, float)
    return align_reduced_gains(pair)


def align_reduced_gains(pair):
    """Re-derive the reduced input/noise gains to match the lift.

    B_r = pinv(P) B and B_rw = pinv(P) B_w minimize the channel mismatch
    the similarity quantification has to absorb.
    """
    pinvP = np.linalg.pinv(pair.P)
    model = pair.full
    pair.reduced.B = pinvP @ model.B
    pair.reduced.B_w = pinvP @ model.B_w
    return pair


def diagonalize_reduced_noise(pair):
    """Rotate the reduced coordinates so the noise covariance is diagonal.

    The factored abstraction needs per-axis independent noise; a similarity
    transform of the reduced model achieves it without touching the
    input-output behavior. P and Q are rotated along.
    """
    red = pair.reduced
    cov = red.B_w @ red.B_w.T
    vals, R = np.linalg.eigh(0.5 * (cov + cov.T))
    red.A = R.T @ red.A @ R
    red.B = R.T @ red.B
    red.B_w = R.T @ red.B_w
    red.C = red.C @ R
    pair.P = pair.P @ R
    pair.Q = pair.Q @ R
    if red.X is not None:
        red.X = Polytope(red.X.H @ R, red.X.h)
    return pair


def lift_initial_state(pair, x0, D_r=None):
    """Reduced initial state minimizing || x0 - P x_r || in the D_r norm."""
    P = pair.P
    D_r = np.eye(pair.full.n) if D_r is None else np.asarray(D_r, float)
    M = P.T @ D_r @ P
    return np.linalg.solve(M, P.T @ D_r @ np.asarray(x0, float))


def reduce_x(model, U_act, P1, iterations):
    """Shrink the state space toward an invariant candidate for safety specs.

    Intersects P1 with its controllable predecessors ``iterations`` times and
    replaces X with the bounding box of the result.
    """
    current = P1
    for _ in range(iterations):
        pre = pre_set(current, model, U_act)
        current = current.intersect(pre)
        if current.is_empty():
            raise EmptyResult("no invariant candidate inside the safe region")
    box = current.bounding_box()
    return model.replace(X=box)
