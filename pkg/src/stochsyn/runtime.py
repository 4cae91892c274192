"""Control refinement and closed-loop deployment.

A refined controller tracks the specification automaton on measured
outputs, maps the measured state to an abstract state through the
simulation relation, and assembles the concrete input through the chain of
interface functions. Rollouts use per-run random streams so a seed fixes
every trajectory bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetViolation, RelationBreach, VersionMismatch
from .models import PwaModel
from .similarity import SimulationRelation
from .speclang import Dfa

ARTIFACT_VERSION = 1


class Controller:
    """Refined policy with DFA tracking and interface refinement.

    The controller consumes the measured state, advances its internal DFA
    state on the true output label, picks the abstract input of the policy,
    and refines it to a concrete input that respects the input space.
    """

    def __init__(self, policy_table, dfa, relation, grid, inputs, C,
                 mode_ids=None, K_modes=None, mor=None, steady=None,
                 value_field=None, labeling=None):
        self.policy_table = np.asarray(policy_table, dtype=np.int32)
        self.dfa = dfa
        self.relation = relation
        self.grid = grid
        self.inputs = inputs
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.mode_ids = mode_ids
        self.K_modes = K_modes          # per-mode feedback for PWA interfaces
        self.mor = mor                  # dict with P, Q, K_mor, F, reduced A/B/Bw
        self.steady = steady            # SteadyStateShift or None
        self.value_field = value_field
        self.labeling = labeling
        self.q = None
        self.breaches = 0
        self.clamped = 0

    # -- state tracking -----------------------------------------------------

    def reset(self):
        self.q = None
        self.breaches = 0
        self.clamped = 0

    def _to_deviation(self, x):
        if self.steady is not None:
            return np.asarray(x, float) - self.steady.x_ss
        return np.asarray(x, float)

    def _advance_dfa(self, y):
        letter = int(self.labeling.letter(y))
        base = self.dfa.q0 if self.q is None else self.q
        self.q = self.dfa.step(base, letter)
        return letter

    def _reduced_state(self, x):
        """Weighted projection onto the lifted subspace."""
        P = self.mor["P"]
        D_r = self.mor["D_r"]
        M = P.T @ D_r @ P
        return np.linalg.solve(M, P.T @ D_r @ x)

    def _abstract_state(self, x_r):
        idx = self.grid.index(x_r)
        if idx >= 0 and self.relation.membership(self.grid.center(idx), x_r):
            return idx, False
        # Repair: nearest grid state in the weighted norm among neighbors of
        # the clamped cell (boundary noise), else flag a breach.
        lows = self.grid.lows + 0.5 * self.grid.widths
        highs = self.grid.highs - 0.5 * self.grid.widths
        clamped = np.clip(x_r, lows, highs)
        idx = self.grid.index(clamped)
        center = self.grid.center(idx)
        if self.relation.membership(center, x_r):
            return idx, False
        return idx, True

    def step(self, x):
        """Concrete input for the measured state; advances the DFA."""
        x = self._to_deviation(x)
        y = self.C @ x
        self._advance_dfa(y)
        mor = self.mor
        x_r = self._reduced_state(x) if mor is not None else x
        state, breach = self._abstract_state(x_r)
        if breach:
            self.breaches += 1
        u_hat = self.inputs.points[self.policy_table[state, self.q]]
        x_hat = self.grid.center(state)
        u_r = u_hat
        if self.relation.interface == 1 and self.relation.K is not None:
            K = self.relation.K
            if K.ndim == 3:
                K = K[self.mode_ids[state]]
            u_r = u_hat + K @ (x_r - x_hat)
        if mor is not None:
            e = x - mor["P"] @ x_r
            u = u_r + mor["Q"] @ x_r + mor["K_mor"] @ e
        else:
            u = u_r
        self.last_x_r = x_r
        self.last_u_r = u_r
        lo, hi = self.input_bounds
        if np.any(u < lo - 1e-9) or np.any(u > hi + 1e-9):
            self.clamped += 1
        return np.clip(u, lo, hi)

    @property
    def input_bounds(self):
        return self._input_bounds

    def set_input_bounds(self, lows, highs):
        self._input_bounds = (np.asarray(lows, float), np.asarray(highs, float))

    # -- persistence ----------------------------------------------------------

    def save(self, path):
        meta = {
            "version": ARTIFACT_VERSION,
            "dfa": self.dfa.to_json(),
            "relation": self.relation.to_dict(),
            "grid": {"lows": self.grid.lows.tolist(),
                     "highs": self.grid.highs.tolist(),
                     "counts": self.grid.counts.tolist()},
            "input_bounds": [self._input_bounds[0].tolist(),
                             self._input_bounds[1].tolist()],
            "has_mor": self.mor is not None,
            "steady": None if self.steady is None else {
                "x_ss": self.steady.x_ss.tolist(),
                "u_ss": self.steady.u_ss.tolist(),
                "y_ss": self.steady.y_ss.tolist()},
        }
        arrays = {
            "policy": self.policy_table,
            "inputs": self.inputs.points,
            "C": self.C,
            "meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        }
        if self.mode_ids is not None:
            arrays["mode_ids"] = self.mode_ids
        if self.value_field is not None:
            arrays["value_field"] = self.value_field
        if self.mor is not None:
            for key in ("P", "Q", "K_mor", "F", "D_r", "A_r", "B_r", "Bw_r"):
                arrays[f"mor_{key}"] = self.mor[key]
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path, labeling=None):
        from .abstraction import AbstractInputSet, Grid
        from .geometry import Polytope
        from .models import SteadyStateShift
        data = np.load(path, allow_pickle=False)
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["version"] != ARTIFACT_VERSION:
            raise VersionMismatch(
                f"artifact version {meta['version']}, expected {ARTIFACT_VERSION}")
        dfa = Dfa.from_json(meta["dfa"])
        relation = SimulationRelation.from_dict(meta["relation"])
        grid = Grid(meta["grid"]["lows"], meta["grid"]["highs"],
                    meta["grid"]["counts"])
        points = data["inputs"]
        inputs = AbstractInputSet(
            points=points,
            actuation=Polytope.box(points.min(axis=0), points.max(axis=0)),
            feedback=None, fractions=(1.0, 0.0),
            lu=(points.shape[0],))
        mor = None
        if meta["has_mor"]:
            mor = {key: data[f"mor_{key}"]
                   for key in ("P", "Q", "K_mor", "F", "D_r", "A_r", "B_r",
                               "Bw_r")}
        steady = None
        if meta.get("steady"):
            steady = SteadyStateShift(
                x_ss=np.asarray(meta["steady"]["x_ss"]),
                u_ss=np.asarray(meta["steady"]["u_ss"]),
                y_ss=np.asarray(meta["steady"]["y_ss"]))
        ctrl = cls(policy_table=data["policy"], dfa=dfa, relation=relation,
                   grid=grid, inputs=inputs, C=data["C"],
                   mode_ids=data["mode_ids"] if "mode_ids" in data else None,
                   mor=mor, steady=steady,
                   value_field=(data["value_field"]
                                if "value_field" in data else None),
                   labeling=labeling)
        lo, hi = meta["input_bounds"]
        ctrl.set_input_bounds(lo, hi)
        return ctrl


def refine_controller(vf, pol, abs_model, rel, model, dfa, pair=None,
                      steady=None, value_field=None):
    """Package the synthesized policy as a deployable controller.

    Validates that every abstract input plus the worst-case feedback and
    reduced-state shift stays inside the input space, raising
    BudgetViolation otherwise.
    """
    U = model.U
    u_lo, u_hi = U.bounds
    act_lo, act_hi = abs_model.inputs.actuation.bounds
    margin_lo = act_lo - u_lo
    margin_hi = u_hi - act_hi
    if np.any(margin_lo < -1e-9) or np.any(margin_hi < -1e-9):
        raise BudgetViolation("abstract inputs leave the input space")
    if rel.interface == 1 and rel.K is not None:
        fb = abs_model.inputs.feedback
        if fb is None:
            raise BudgetViolation("feedback interface without reserved budget")
        fb_lo, fb_hi = fb.bounds
        K = np.asarray(rel.K)
        Ks = K if K.ndim == 3 else K[None]
        from .similarity import _mat_isqrt
        D_isqrt = _mat_isqrt(rel.D)
        worst = rel.epsilon * np.linalg.norm(Ks @ D_isqrt, axis=-1)
        if np.any(worst.max(axis=0) > fb_hi + 1e-9):
            raise BudgetViolation(
                "worst-case feedback exceeds the reserved fraction")
        if np.any(fb_hi > np.minimum(margin_lo, margin_hi) + 1e-9):
            raise BudgetViolation(
                "feedback budget does not fit next to the actuation box")
    mor = None
    if pair is not None:
        mor = {"P": pair.P, "Q": pair.Q, "K_mor": rel.K_mor, "F": rel.F,
               "D_r": (rel.parts[0].D if rel.parts else rel.D),
               "A_r": pair.reduced.A, "B_r": pair.reduced.B,
               "Bw_r": pair.reduced.B_w}
    mode_ids = abs_model.mode_ids if isinstance(model, PwaModel) else None
    ctrl = Controller(policy_table=pol.table, dfa=dfa, relation=rel,
                      grid=abs_model.grid, inputs=abs_model.inputs,
                      C=model.C, mode_ids=mode_ids, mor=mor, steady=steady,
                      value_field=value_field, labeling=model.labeling)
    ctrl.set_input_bounds(u_lo, u_hi)
    return ctrl


def controller_step(controller, x):
    return controller.step(x)


@dataclass
class SimResult:
    """Closed-loop rollout record."""
    states: np.ndarray        # (runs, N+1, n)
    inputs: np.ndarray        # (runs, N, m)
    q_trace: np.ndarray       # (runs, N+1) DFA states
    letters: np.ndarray       # (runs, N+1)
    satisfied: np.ndarray     # (runs,) bool
    breaches: int
    input_violations: int
    reduced: np.ndarray = None  # coupled reduced-order trace (MOR runs)

    @property
    def satisfaction(self):
        return float(np.mean(self.satisfied))

    def wilson_interval(self, z=1.96):
        n = self.satisfied.size
        p = self.satisfaction
        denom = 1 + z * z / n
        center = (p + z * z / (2 * n)) / denom
        half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
        return center - half, center + half

    def to_csv(self):
        """Trajectory table: run, t, states..., inputs..., q, letter."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        n = self.states.shape[2]
        m = self.inputs.shape[2]
        writer.writerow(["run", "t"] + [f"x{i+1}" for i in range(n)]
                        + [f"u{i+1}" for i in range(m)] + ["q", "letter"])
        for r in range(self.states.shape[0]):
            for t in range(self.states.shape[1]):
                u = (list(np.round(self.inputs[r, t], 12))
                     if t < self.inputs.shape[1] else [""] * m)
                writer.writerow([r, t] + list(np.round(self.states[r, t], 12))
                                + u + [int(self.q_trace[r, t]),
                                       int(self.letters[r, t])])
        return buf.getvalue()


def simulate(model, controller, x0, N, runs=1, seed=0):
    """Independent closed-loop rollouts; satisfaction within the horizon.

    Each run draws its own stream from (seed, run). A run satisfies when
    the DFA reaches the accepting set within N steps; relation breaches are
    logged and the run keeps going with the nearest abstract state.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    m = controller.inputs.points.shape[1]
    dfa = controller.dfa
    states = np.zeros((runs, N + 1, n))
    inputs_rec = np.zeros((runs, N, m))
    q_trace = np.zeros((runs, N + 1), dtype=np.int32)
    letters = np.zeros((runs, N + 1), dtype=np.int32)
    satisfied = np.zeros(runs, dtype=bool)
    total_breaches = 0
    violations = 0
    lo, hi = controller.input_bounds
    reduced = None
    if controller.mor is not None:
        r_dim = controller.mor["P"].shape[1]
        reduced = np.zeros((runs, N + 1, r_dim))
    for r in range(runs):
        rng = np.random.default_rng([seed, r])
        controller.reset()
        x = x0.copy()
        states[r, 0] = x
        x_dev = controller._to_deviation(x)
        letters[r, 0] = controller.labeling.letter(controller.C @ x_dev)
        xr_track = None
        done = False
        for t in range(N):
            u = controller.step(x)
            q_trace[r, t] = controller.q
            if controller.q in dfa.accepting:
                satisfied[r] = True
                done = True
                states[r, t + 1:] = x
                q_trace[r, t:] = controller.q
                letters[r, t + 1:] = letters[r, t]
                break
            if np.any(u < lo - 1e-9) or np.any(u > hi + 1e-9):
                violations += 1
            inputs_rec[r, t] = u
            w = rng.standard_normal(model.q)
            if controller.mor is not None:
                # coupled reduced-order trace: w_r = w + F (x - P x_r)
                mor = controller.mor
                if xr_track is None:
                    xr_track = controller.last_x_r.copy()
                reduced[r, t] = xr_track
                w_r = w + mor["F"] @ (x_dev - mor["P"] @ xr_track)
                xr_track = mor["A_r"] @ xr_track + mor["B_r"] @ controller.last_u_r \
                    + mor["Bw_r"] @ w_r
            x_dev = model.step(x_dev, u, w)
            x = x_dev + (controller.steady.x_ss
                         if controller.steady is not None else 0.0)
            states[r, t + 1] = x
            letters[r, t + 1] = controller.labeling.letter(
                controller.C @ controller._to_deviation(x))
        if not done:
            # consume the final measurement's label
            controller._advance_dfa(controller.C @ controller._to_deviation(x))
            q_trace[r, N] = controller.q
            if controller.q in dfa.accepting:
                satisfied[r] = True
        total_breaches += controller.breaches
    return SimResult(states=states, inputs=inputs_rec, q_trace=q_trace,
                     letters=letters, satisfied=satisfied,
                     breaches=total_breaches, input_violations=violations,
                     reduced=reduced)
