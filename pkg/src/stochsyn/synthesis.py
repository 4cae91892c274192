"""Robust dynamic programming over the implicit product of the abstraction
and the specification DFA.

The value of a pair (abstract state, DFA state) is the probability of
reaching the accepting set, made robust by stepping the DFA through the
worst letter the output deviation allows and by discounting the per-step
decoupling probability. Sweeps use the factored transition kernel; the
product MDP is never built explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence

DEFAULT_THOLD = 1e-12
MAX_ITER = 100_000


@dataclass
class ValueFunction:
    """Robust satisfaction probabilities per (abstract state, DFA state)."""
    V: np.ndarray              # (n_states, n_q), entries in [0, 1]
    iterations: int
    converged: bool
    upper: bool = False


@dataclass
class Policy:
    """Abstract input index per (abstract state, DFA state)."""
    table: np.ndarray          # (n_states, n_q) int

    def input_index(self, state, q):
        return int(self.table[state, q])


def _live_states(dfa):
    """DFA states whose values need iterating (not accepting, not trap)."""
    return [q for q in range(dfa.n_states)
            if q not in dfa.accepting and q != dfa.trap]


def _letter_values(V, dfa, q, letter):
    """max(1_acc, V) after the DFA reads ``letter`` in state q."""
    t = dfa.delta[q][letter]
    if t in dfa.accepting:
        return None  # stands for the constant 1
    return V[:, t]


def _worst_case_update(V, abs_model, dfa, q, upper):
    """Per-state min (or max) over the letter set of the successor value."""
    n = abs_model.n_states
    n_letters = dfa.n_letters
    def_mask = abs_model.def_mask
    unc_mask = abs_model.unc_mask
    if def_mask is None:
        raise ValueError("run label_sets before synthesis")
    # Cache per-letter value vectors lazily; most letters repeat.
    letter_vals = {}

    def vals_for(letter):
        if letter not in letter_vals:
            v = _letter_values(V, dfa, q, letter)
            letter_vals[letter] = 1.0 if v is None else v
        return letter_vals[letter]

    W = np.empty(n)
    n_aps = len(dfa.ap_names)
    key = def_mask * (1 << 30) + unc_mask  # group states by letter set
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    boundaries = np.nonzero(np.diff(sorted_key))[0] + 1
    segments = np.split(order, boundaries)
    for seg in segments:
        d = int(def_mask[seg[0]])
        u = int(unc_mask[seg[0]])
        letters = []
        bits = [b for b in range(n_aps) if u >> b & 1]
        for pick in range(1 << len(bits)):
            letter = d
            for i, b in enumerate(bits):
                if pick >> i & 1:
                    letter |= 1 << b
            letters.append(letter)
        acc = None
        for letter in letters:
            v = vals_for(letter)
            v_seg = v if np.isscalar(v) else v[seg]
            if acc is None:
                acc = np.full(seg.size, v_seg) if np.isscalar(v_seg) else v_seg.copy()
            elif upper:
                np.maximum(acc, v_seg, out=acc)
            else:
                np.minimum(acc, v_seg, out=acc)
        W[seg] = acc
    return W


def robust_bellman_step(V, abs_model, dfa, delta_states, upper=False,
                        row_masses=None):
    """One sweep of the robust operator.

    Returns (V', argmax input table). ``delta_states`` is the per-state
    deviation probability. In lower-bound mode, probability mass leaving
    the grid contributes 0 and the worst DFA transition within the letter
    set is taken; in upper-bound mode it contributes 1 and the best
    transition is taken.
    """
    n, n_q = V.shape
    V_new = V.copy()
    argmax = np.zeros((n, n_q), dtype=np.int32)
    tensor = abs_model.tensor
    for q in _live_states(dfa):
        W = _worst_case_update(V, abs_model, dfa, q, upper)
        best = None
        best_arg = None
        for u in range(abs_model.n_inputs):
            E = tensor.expected_value(W, u)
            if upper:
                E = E + (1.0 - row_masses[u])
            if best is None:
                best = E
                best_arg = np.zeros(n, dtype=np.int32)
            else:
                better = E > best
                best = np.where(better, E, best)
                best_arg[better] = u
        if upper:
            V_new[:, q] = np.clip(best + delta_states, 0.0, 1.0)
        else:
            V_new[:, q] = np.clip(best - delta_states, 0.0, 1.0)
        argmax[:, q] = best_arg
    for q in dfa.accepting:
        V_new[:, q] = 1.0
    return V_new, argmax


def value_iteration(abs_model, dfa, rel=None, thold=DEFAULT_THOLD,
                    upper=False, delta=None, max_iter=MAX_ITER,
                    check_monotone=True):
    """Iterate the robust operator from the accepting indicator to a fixed
    point.

    Either a simulation relation or an explicit per-state (or scalar)
    ``delta`` must be supplied. Returns (ValueFunction, Policy). Raises
    NonConvergence when the sup-norm difference does not drop below
    ``thold`` within ``max_iter`` sweeps.
    """
    if thold <= 0:
        raise ValueError("threshold must be positive")
    n = abs_model.n_states
    if delta is None:
        if rel is None:
            raise ValueError("need a relation or explicit delta")
        delta_states = rel.delta_for_states(abs_model.mode_ids)
    else:
        delta_states = np.broadcast_to(np.asarray(delta, dtype=float), (n,))
    V = np.zeros((n, dfa.n_states))
    for q in dfa.accepting:
        V[:, q] = 1.0
    row_masses = None
    if upper:
        ones = np.ones(n)
        row_masses = [abs_model.tensor.expected_value(ones, u)
                      for u in range(abs_model.n_inputs)]
    argmax = np.zeros((n, dfa.n_states), dtype=np.int32)
    for it in range(1, max_iter + 1):
        V_new, argmax_sweep = robust_bellman_step(
            V, abs_model, dfa, delta_states, upper=upper,
            row_masses=row_masses)
        # Lock actions in on strictly improving sweeps only: with ties at
        # the fixed point every input looks optimal, but only an action
        # recorded while the value wavefront passed is guaranteed proper.
        improved = V_new > V + 1e-15
        argmax[improved] = argmax_sweep[improved]
        diff = float(np.max(np.abs(V_new - V)))
        if check_monotone and not upper:
            if np.min(V_new - V) < -1e-10:
                raise AssertionError(
                    "monotone convergence violated in lower-bound mode")
        V = V_new
        if diff < thold:
            return (ValueFunction(V=V, iterations=it, converged=True,
                                  upper=upper),
                    Policy(table=argmax))
    raise NonConvergence(
        f"value iteration still moving after {max_iter} sweeps")


def extract_policy(vf, argmax_table):
    """Policy from a converged value function's argmax record."""
    return Policy(table=np.asarray(argmax_table, dtype=np.int32))


def initial_state_values(vf, abs_model, dfa, labeling):
    """Value of each cell at the DFA state reached by its own label.

    The initial DFA state consumes the label of the initial output before
    synthesis readout: q_init = delta(q0, L(y0)).
    """
    letters = labeling.letters_many(abs_model.outputs)
    delta = np.asarray(dfa.delta)
    q_init = delta[dfa.q0, letters]
    acc = np.isin(q_init, list(dfa.accepting))
    vals = vf.V[np.arange(abs_model.n_states), q_init]
    return np.where(acc, 1.0, vals), q_init


def value_at(vf, abs_model, dfa, labeling, x0):
    """Robust satisfaction at a concrete initial state."""
    state = abs_model.grid.index(np.asarray(x0, dtype=float))
    if state < 0:
        return 0.0, -1, dfa.q0
    y0 = abs_model.model.output(np.asarray(x0, dtype=float))
    q_init = dfa.step(dfa.q0, labeling.letter(y0))
    if q_init in dfa.accepting:
        return 1.0, state, q_init
    return float(vf.V[state, q_init]), state, q_init
