"""Robust Bellman operator and value iteration against a dense oracle."""

import numpy as np
import pytest

from stochsyn.errors import NonConvergence
from stochsyn.speclang import Dfa
from stochsyn.synthesis import (
    Policy, initial_state_values, robust_bellman_step, value_iteration,
)


class FakeTensor:
    """Dense substochastic transition matrices, one per input."""

    def __init__(self, P):
        self.P = np.asarray(P, dtype=float)

    def expected_value(self, W, u):
        return self.P[u] @ W


class FakeAbs:
    def __init__(self, P, def_mask, unc_mask):
        self.tensor = FakeTensor(P)
        self.n_states = self.tensor.P.shape[1]
        self.n_inputs = self.tensor.P.shape[0]
        self.def_mask = np.asarray(def_mask, dtype=np.int64)
        self.unc_mask = np.asarray(unc_mask, dtype=np.int64)
        self.mode_ids = np.zeros(self.n_states, dtype=np.int64)


def _letters_of(d, u, n_aps):
    bits = [b for b in range(n_aps) if u >> b & 1]
    out = []
    for pick in range(1 << len(bits)):
        letter = d
        for i, b in enumerate(bits):
            if pick >> i & 1:
                letter |= 1 << b
        out.append(letter)
    return out


def brute_force_iteration(P, dfa, def_mask, unc_mask, delta, thold=1e-14,
                          upper=False, max_iter=10_000):
    """Direct dynamic program with explicit loops (independent oracle)."""
    P = np.asarray(P, dtype=float)
    n = P.shape[1]
    n_q = dfa.n_states
    n_aps = len(dfa.ap_names)
    acc = dfa.accepting
    V = np.zeros((n, n_q))
    for q in acc:
        V[:, q] = 1.0
    out_mass = 1.0 - P.sum(axis=2)  # (inputs, states)
    for _ in range(max_iter):
        V_new = V.copy()
        for q in range(n_q):
            if q in acc:
                continue
            for s in range(n):
                best = -np.inf
                for u in range(P.shape[0]):
                    total = 0.0
                    for s2 in range(n):
                        if P[u, s, s2] == 0.0:
                            continue
                        cands = []
                        for letter in _letters_of(int(def_mask[s2]),
                                                  int(unc_mask[s2]), n_aps):
                            t = dfa.delta[q][letter]
                            cands.append(1.0 if t in acc else V[s2, t])
                        w = max(cands) if upper else min(cands)
                        total += P[u, s, s2] * w
                    if upper:
                        total += out_mass[u, s]
                    best = max(best, total)
                val = best + delta[s] if upper else best - delta[s]
                V_new[s, q] = min(1.0, max(0.0, val))
        diff = np.max(np.abs(V_new - V))
        V = V_new
        if diff < thold:
            break
    return V


def _reach_dfa():
    # One AP; accept once p is read.
    delta = [[0, 1], [1, 1]]
    return Dfa(2, ("p",), delta, q0=0, accepting={1}, trap=None)


def test_already_accepting_dfa_gives_one():
    dfa = Dfa(1, ("p",), [[0, 0]], q0=0, accepting={0}, trap=None)
    abs_model = FakeAbs(np.full((1, 3, 3), 1 / 3), [0, 0, 0], [0, 0, 0])
    vf, _ = value_iteration(abs_model, dfa, delta=0.0, thold=1e-9)
    np.testing.assert_allclose(vf.V, 1.0)


def test_hand_two_state_chain():
    # P(s2 | s1) = 0.7 where s2 carries the accepting label; delta = 0.05.
    dfa = _reach_dfa()
    P = np.array([[[0.3, 0.7], [0.0, 1.0]]])
    abs_model = FakeAbs(P, def_mask=[0, 1], unc_mask=[0, 0])
    V0 = np.zeros((2, 2))
    V0[:, 1] = 1.0
    V1, _ = robust_bellman_step(V0, abs_model, dfa, np.array([0.05, 0.05]))
    assert V1[0, 0] == pytest.approx(0.65, abs=1e-12)


def test_delta_one_floors_everything():
    dfa = _reach_dfa()
    P = np.array([[[0.5, 0.5], [0.0, 1.0]]])
    abs_model = FakeAbs(P, def_mask=[0, 1], unc_mask=[0, 0])
    vf, _ = value_iteration(abs_model, dfa, delta=1.0, thold=1e-9)
    np.testing.assert_allclose(vf.V[:, 0], 0.0)
    np.testing.assert_allclose(vf.V[:, 1], 1.0)


def _random_instance(rng, n_max=50):
    n = int(rng.integers(3, n_max + 1))
    n_inputs = int(rng.integers(1, 4))
    P = rng.uniform(0, 1, size=(n_inputs, n, n)) ** 3
    P /= P.sum(axis=2, keepdims=True)
    P *= rng.uniform(0.85, 1.0, size=(n_inputs, n, 1))  # substochastic rows
    n_aps = int(rng.integers(1, 3))
    n_letters = 1 << n_aps
    n_q = int(rng.integers(2, 5))
    delta_table = rng.integers(0, n_q, size=(n_q, n_letters)).tolist()
    acc = {int(rng.integers(0, n_q))}
    for q in acc:  # accepting states absorb
        delta_table[q] = [q] * n_letters
    dfa = Dfa(n_q, tuple(f"p{i}" for i in range(n_aps)), delta_table,
              q0=0, accepting=acc, trap=None)
    unc = rng.integers(0, n_letters, size=n)
    defs = rng.integers(0, n_letters, size=n) & ~unc
    delta = rng.uniform(0, 0.1, size=n)
    return FakeAbs(P, defs, unc), dfa, delta


@pytest.mark.parametrize("seed", range(25))
def test_oracle_equivalence(seed):
    rng = np.random.default_rng(seed)
    abs_model, dfa, delta = _random_instance(rng, n_max=20)
    vf, _ = value_iteration(abs_model, dfa, delta=delta, thold=1e-14)
    expected = brute_force_iteration(abs_model.tensor.P, dfa,
                                     abs_model.def_mask, abs_model.unc_mask,
                                     delta)
    np.testing.assert_allclose(vf.V, expected, atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_lower_below_upper(seed):
    rng = np.random.default_rng(100 + seed)
    abs_model, dfa, delta = _random_instance(rng, n_max=15)
    lo, _ = value_iteration(abs_model, dfa, delta=delta, thold=1e-12)
    hi, _ = value_iteration(abs_model, dfa, delta=delta, thold=1e-12,
                            upper=True)
    assert np.all(lo.V <= hi.V + 1e-12)
    expected = brute_force_iteration(abs_model.tensor.P, dfa,
                                     abs_model.def_mask, abs_model.unc_mask,
                                     delta, upper=True)
    np.testing.assert_allclose(hi.V, expected, atol=1e-9)


def test_values_bounded_and_monotone_sweeps():
    rng = np.random.default_rng(42)
    abs_model, dfa, delta = _random_instance(rng)
    n = abs_model.n_states
    V = np.zeros((n, dfa.n_states))
    for q in dfa.accepting:
        V[:, q] = 1.0
    for _ in range(30):
        V_next, _ = robust_bellman_step(V, abs_model, dfa, delta)
        assert np.all(V_next >= V - 1e-12)
        assert np.all(V_next >= 0.0) and np.all(V_next <= 1.0)
        V = V_next


def test_more_delta_never_helps():
    rng = np.random.default_rng(7)
    abs_model, dfa, delta = _random_instance(rng, n_max=15)
    vf_small, _ = value_iteration(abs_model, dfa, delta=delta, thold=1e-12)
    vf_big, _ = value_iteration(abs_model, dfa, delta=delta + 0.05,
                                thold=1e-12)
    assert np.all(vf_big.V <= vf_small.V + 1e-12)


def test_larger_letter_sets_never_help():
    rng = np.random.default_rng(8)
    abs_model, dfa, delta = _random_instance(rng, n_max=15)
    vf, _ = value_iteration(abs_model, dfa, delta=delta, thold=1e-12)
    wider = FakeAbs(abs_model.tensor.P, abs_model.def_mask & 0,
                    abs_model.unc_mask | abs_model.def_mask | 1)
    vf_wide, _ = value_iteration(wider, dfa, delta=delta, thold=1e-12)
    assert np.all(vf_wide.V <= vf.V + 1e-12)


def test_policy_single_input_constant():
    dfa = _reach_dfa()
    P = np.array([[[0.5, 0.5], [0.0, 1.0]]])
    abs_model = FakeAbs(P, def_mask=[0, 1], unc_mask=[0, 0])
    vf, pol = value_iteration(abs_model, dfa, delta=0.0, thold=1e-12)
    assert np.all(pol.table == 0)


def test_policy_prefers_dominant_input():
    # Input 1 ("go") reaches the accepting state faster everywhere.
    dfa = _reach_dfa()
    stay = np.array([[0.9, 0.1], [0.0, 1.0]])
    go = np.array([[0.2, 0.8], [0.0, 1.0]])
    abs_model = FakeAbs(np.stack([stay, go]), def_mask=[0, 1], unc_mask=[0, 0])
    vf, pol = value_iteration(abs_model, dfa, delta=0.0, thold=1e-12)
    assert pol.table[0, 0] == 1


def test_nonconvergence_raises():
    dfa = _reach_dfa()
    P = np.array([[[0.99, 0.01], [0.0, 1.0]]])
    abs_model = FakeAbs(P, def_mask=[0, 1], unc_mask=[0, 0])
    with pytest.raises(NonConvergence):
        # Slowly filling value with a cap of 3 sweeps trips the guard.
        value_iteration(abs_model, dfa, delta=0.0, thold=1e-30, max_iter=3)


def test_rejecting_trap_zero():
    # DFA with a trap state: letter p leads to acceptance, letter q to trap.
    delta = [[0, 1, 2, 2], [1, 1, 1, 1], [2, 2, 2, 2]]
    dfa = Dfa(3, ("p", "q"), delta, q0=0, accepting={1}, trap=2)
    P = np.array([[[0.5, 0.25, 0.25], [0, 1, 0], [0, 0, 1]]])
    abs_model = FakeAbs(P, def_mask=[0, 1, 2], unc_mask=[0, 0, 0])
    vf, _ = value_iteration(abs_model, dfa, delta=0.0, thold=1e-12)
    np.testing.assert_allclose(vf.V[:, 2], 0.0)
    assert vf.V[0, 0] > 0
