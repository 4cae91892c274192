"""Co-safe LTL formulas and their translation to complete DFAs.

Formulas are built from atomic propositions with ``! & | X U F`` (negation
on atoms only). A formula is translated to a nondeterministic automaton on
finite words by local unfolding, determinized by the powerset construction,
completed with a rejecting trap, and minimized. Accepting states are
absorbing: once a good prefix has been seen, every extension stays accepted.

Letters are encoded as integer bitmasks over the formula's ordered AP list
(bit ``i`` set means ``aps[i]`` holds).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .errors import FormulaSyntaxError, NotCosafeError

__all__ = [
    "Ap", "Not", "And", "Or", "Next", "Until", "Eventually",
    "Formula", "Dfa", "parse_scltl", "translate_spec", "word_satisfies",
]


# ---------------------------------------------------------------------------
# Abstract syntax tree


@dataclass(frozen=True)
class Ap:
    name: str


@dataclass(frozen=True)
class Not:
    sub: "Ap"


@dataclass(frozen=True)
class And:
    left: object
    right: object


@dataclass(frozen=True)
class Or:
    left: object
    right: object


@dataclass(frozen=True)
class Next:
    sub: object


@dataclass(frozen=True)
class Until:
    left: object
    right: object


@dataclass(frozen=True)
class Eventually:
    sub: object


@dataclass(frozen=True)
class Formula:
    """Parsed scLTL formula plus its ordered atomic-proposition list."""

    root: object
    aps: tuple

    @property
    def n_letters(self):
        return 1 << len(self.aps)

    def letter(self, true_aps):
        """Encode a collection of AP names as a letter bitmask."""
        mask = 0
        for name in true_aps:
            mask |= 1 << self.aps.index(name)
        return mask

    def letter_names(self, mask):
        return tuple(a for i, a in enumerate(self.aps) if mask >> i & 1)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<sym>[!&|()]))")
_OPERATORS = {"U", "X", "F", "G", "R", "W", "M"}
_UNSUPPORTED = {"G": "always (G)", "R": "release (R)", "W": "weak until (W)",
                "M": "strong release (M)"}


class _Tokens:
    def __init__(self, text):
        self.text = text
        self.items = []  # (kind, value, position)
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                stripped = text[pos:].lstrip()
                at = len(text) - len(stripped)
                raise FormulaSyntaxError(
                    f"unexpected character {stripped[0]!r}", position=at)
            if m.group("name"):
                kind = "op" if m.group("name") in _OPERATORS else "ap"
                self.items.append((kind, m.group("name"), m.start("name")))
            else:
                self.items.append(("sym", m.group("sym"), m.start("sym")))
            pos = m.end()
        self.idx = 0

    def peek(self):
        if self.idx < len(self.items):
            return self.items[self.idx]
        return ("eof", "", len(self.text))

    def pop(self):
        tok = self.peek()
        self.idx += 1
        return tok


def parse_scltl(text, aps):
    """Parse an scLTL formula over the given AP names.

    Operator precedence, loosest first: ``|``, ``&``, ``U`` (right
    associative), then the unary operators ``! X F``. Negation is only
    admitted directly on an atomic proposition.
    """
    if not text or not text.strip():
        raise FormulaSyntaxError("empty formula", position=0)
    aps = tuple(aps)
    clash = _OPERATORS.intersection(aps)
    if clash:
        raise FormulaSyntaxError(
            f"AP names collide with operator tokens: {sorted(clash)}")
    toks = _Tokens(text)

    def parse_or():
        node = parse_and()
        while toks.peek()[:2] == ("sym", "|"):
            toks.pop()
            node = Or(node, parse_and())
        return node

    def parse_and():
        node = parse_until()
        while toks.peek()[:2] == ("sym", "&"):
            toks.pop()
            node = And(node, parse_until())
        return node

    def parse_until():
        left = parse_unary()
        if toks.peek()[:2] == ("op", "U"):
            toks.pop()
            return Until(left, parse_until())
        return left

    def parse_unary():
        kind, value, pos = toks.peek()
        if kind == "sym" and value == "!":
            toks.pop()
            sub = parse_unary()
            if not isinstance(sub, Ap):
                raise NotCosafeError(
                    f"negation applies to a non-atomic subformula {_fmt(sub)}; "
                    "co-safe formulas only negate atomic propositions")
            return Not(sub)
        if kind == "op":
            toks.pop()
            if value in _UNSUPPORTED:
                raise NotCosafeError(
                    f"operator {_UNSUPPORTED[value]} is outside the co-safe fragment")
            if value == "X":
                return Next(parse_unary())
            if value == "F":
                return Eventually(parse_unary())
            raise FormulaSyntaxError(
                f"operator {value!r} cannot start a subformula", position=pos,
                expected={"!", "X", "F", "(", "<ap>"})
        if kind == "sym" and value == "(":
            toks.pop()
            node = parse_or()
            kind, value, pos = toks.pop()
            if (kind, value) != ("sym", ")"):
                raise FormulaSyntaxError("unbalanced parenthesis", position=pos,
                                         expected={")"})
            return node
        if kind == "ap":
            toks.pop()
            if value not in aps:
                raise FormulaSyntaxError(
                    f"unknown atomic proposition {value!r}", position=pos,
                    expected=set(aps))
            return Ap(value)
        raise FormulaSyntaxError(f"unexpected token {value!r}", position=pos,
                                 expected={"!", "X", "F", "(", "<ap>"})

    root = parse_or()
    kind, value, pos = toks.peek()
    if kind != "eof":
        raise FormulaSyntaxError(f"trailing input {value!r}", position=pos)
    return Formula(root, aps)


def _fmt(node):
    if isinstance(node, Ap):
        return node.name
    if isinstance(node, Not):
        return f"!{_fmt(node.sub)}"
    if isinstance(node, And):
        return f"({_fmt(node.left)} & {_fmt(node.right)})"
    if isinstance(node, Or):
        return f"({_fmt(node.left)} | {_fmt(node.right)})"
    if isinstance(node, Next):
        return f"X {_fmt(node.sub)}"
    if isinstance(node, Until):
        return f"({_fmt(node.left)} U {_fmt(node.right)})"
    if isinstance(node, Eventually):
        return f"F {_fmt(node.sub)}"
    raise TypeError(node)


# ---------------------------------------------------------------------------
# Finite-word semantics (test oracle)


def word_satisfies(formula, word):
    """Recursive good-prefix semantics of ``formula`` on a finite word.

    ``word`` is a sequence of letters, each either an int bitmask or an
    iterable of AP names. X is strong (needs a next position); U and F must
    be witnessed within the word.
    """
    letters = [w if isinstance(w, int) else formula.letter(w) for w in word]
    ap_bit = {name: 1 << i for i, name in enumerate(formula.aps)}

    def sat(node, i):
        if isinstance(node, Ap):
            return i < len(letters) and bool(letters[i] & ap_bit[node.name])
        if isinstance(node, Not):
            return i < len(letters) and not letters[i] & ap_bit[node.sub.name]
        if isinstance(node, And):
            return sat(node.left, i) and sat(node.right, i)
        if isinstance(node, Or):
            return sat(node.left, i) or sat(node.right, i)
        if isinstance(node, Next):
            return sat(node.sub, i + 1)
        if isinstance(node, Eventually):
            return any(sat(node.sub, j) for j in range(i, len(letters)))
        if isinstance(node, Until):
            for j in range(i, len(letters)):
                if sat(node.right, j):
                    return True
                if not sat(node.left, j):
                    return False
            return False
        raise TypeError(node)

    return sat(formula.root, 0)


# ---------------------------------------------------------------------------
# NFA construction by local unfolding

# An NFA state is a frozenset of pending subformulas (a conjunction of
# obligations). The empty set means every obligation was discharged; it is
# the unique accepting state and loops on all letters.


def _pd(node, letter, ap_bit):
    """Partial derivatives: alternative obligation sets after reading letter."""
    if isinstance(node, Ap):
        return (frozenset(),) if letter & ap_bit[node.name] else ()
    if isinstance(node, Not):
        return (frozenset(),) if not letter & ap_bit[node.sub.name] else ()
    if isinstance(node, And):
        out = []
        for a in _pd(node.left, letter, ap_bit):
            for b in _pd(node.right, letter, ap_bit):
                out.append(a | b)
        return tuple(out)
    if isinstance(node, Or):
        return _pd(node.left, letter, ap_bit) + _pd(node.right, letter, ap_bit)
    if isinstance(node, Next):
        return (frozenset((node.sub,)),)
    if isinstance(node, Eventually):
        return _pd(node.sub, letter, ap_bit) + (frozenset((node,)),)
    if isinstance(node, Until):
        keep = tuple(s | {node} for s in _pd(node.left, letter, ap_bit))
        return _pd(node.right, letter, ap_bit) + keep
    raise TypeError(node)


def _nfa_successors(state, letter, ap_bit):
    """Successor obligation sets of a single NFA state under one letter."""
    alternatives = [frozenset()]
    for obligation in state:
        derivs = _pd(obligation, letter, ap_bit)
        if not derivs:
            return set()
        alternatives = [acc | d for acc in alternatives for d in set(derivs)]
    return set(alternatives)


def nfa_accepts(formula, word):
    """Direct NFA simulation, used to cross-check determinization."""
    ap_bit = {name: 1 << i for i, name in enumerate(formula.aps)}
    current = {frozenset((formula.root,))}
    for w in word:
        letter = w if isinstance(w, int) else formula.letter(w)
        nxt = set()
        for state in current:
            nxt |= _nfa_successors(state, letter, ap_bit)
        current = nxt
    return frozenset() in current


# ---------------------------------------------------------------------------
# DFA


class Dfa:
    """Complete deterministic finite automaton over letters ``0..2^k-1``.

    Attributes:
        n_states: number of states (ints ``0..n_states-1``).
        ap_names: ordered AP tuple defining the letter encoding.
        delta: list of lists, ``delta[q][letter] -> q'`` (total).
        q0: initial state.
        accepting: frozenset of accepting states, all absorbing.
        trap: id of the rejecting absorbing state, or None if unreachable.
    """

    def __init__(self, n_states, ap_names, delta, q0, accepting, trap=None):
        self.n_states = n_states
        self.ap_names = tuple(ap_names)
        self.delta = [list(row) for row in delta]
        self.q0 = q0
        self.accepting = frozenset(accepting)
        self.trap = trap

    @property
    def n_letters(self):
        return 1 << len(self.ap_names)

    def step(self, q, letter):
        return self.delta[q][letter]

    def accepts(self, word):
        q = self.q0
        for w in word:
            letter = w if isinstance(w, int) else self._encode(w)
            q = self.delta[q][letter]
        return q in self.accepting

    def _encode(self, true_aps):
        mask = 0
        for name in true_aps:
            mask |= 1 << self.ap_names.index(name)
        return mask

    # -- serialization ------------------------------------------------------

    def to_json(self):
        return json.dumps({
            "ap_names": list(self.ap_names),
            "n_states": self.n_states,
            "q0": self.q0,
            "accepting": sorted(self.accepting),
            "trap": self.trap,
            "transitions": {str(q): {str(a): self.delta[q][a]
                                     for a in range(self.n_letters)}
                            for q in range(self.n_states)},
        }, indent=2)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        n = data["n_states"]
        n_letters = 1 << len(data["ap_names"])
        delta = [[data["transitions"][str(q)][str(a)] for a in range(n_letters)]
                 for q in range(n)]
        return cls(n, data["ap_names"], delta, data["q0"],
                   data["accepting"], data.get("trap"))

    def to_dot(self):
        lines = ["digraph dfa {", "  rankdir=LR;", '  init [shape=point];',
                 f"  init -> q{self.q0};"]
        for q in range(self.n_states):
            shape = "doublecircle" if q in self.accepting else "circle"
            lines.append(f'  q{q} [shape={shape}];')
        for q in range(self.n_states):
            by_target = {}
            for a in range(self.n_letters):
                by_target.setdefault(self.delta[q][a], []).append(a)
            for target, letters in sorted(by_target.items()):
                labels = []
                for a in letters:
                    names = [n for i, n in enumerate(self.ap_names) if a >> i & 1]
                    labels.append("{" + ",".join(names) + "}")
                lines.append(f'  q{q} -> q{target} [label="{" ".join(labels)}"];')
        lines.append("}")
        return "\n".join(lines)


def translate_spec(formula):
    """Translate an scLTL formula into a minimal complete DFA.

    The DFA accepts exactly the finite words satisfying the recursive
    good-prefix semantics of :func:`word_satisfies`; accepting states are
    absorbing and a rejecting trap keeps the transition function total.
    """
    ap_bit = {name: 1 << i for i, name in enumerate(formula.aps)}
    n_letters = 1 << len(formula.aps)
    letters = range(n_letters)

    # Powerset construction over NFA obligation sets. The frozenset() NFA
    # state is accepting; any DFA macrostate containing it is accepting and
    # collapsed to a dedicated absorbing state.
    init = frozenset({frozenset((formula.root,))})
    ACCEPT = "accept"
    index = {init: 0}
    rows = []
    worklist = [init]
    accepting_ids = set()
    while worklist:
        macro = worklist.pop()
        while index[macro] >= len(rows):
            rows.append(None)
        row = []
        for letter in letters:
            succ = set()
            for state in macro:
                succ |= _nfa_successors(state, letter, ap_bit)
            if frozenset() in succ:
                succ = ACCEPT
            else:
                succ = frozenset(succ)
            if succ == ACCEPT:
                if ACCEPT not in index:
                    index[ACCEPT] = len(index)
                    while index[ACCEPT] >= len(rows):
                        rows.append(None)
                    rows[index[ACCEPT]] = [index[ACCEPT]] * n_letters
                    accepting_ids.add(index[ACCEPT])
                row.append(index[ACCEPT])
            else:
                if succ not in index:
                    index[succ] = len(index)
                    worklist.append(succ)
                row.append(index[succ])
        rows[index[macro]] = row

    n = len(rows)
    accepting = accepting_ids
    q0 = 0
    delta = rows
    # The empty macrostate, if reached, is already a rejecting trap.
    delta, q0, accepting = _minimize(delta, q0, accepting, n_letters)
    return _canonicalize(formula, delta, q0, accepting, n_letters)


def _minimize(delta, q0, accepting, n_letters):
    """Hopcroft partition refinement on a complete DFA."""
    n = len(delta)
    # Pre-image lists per (letter, state)
    preimage = [[[] for _ in range(n)] for _ in range(n_letters)]
    for q in range(n):
        for a in range(n_letters):
            preimage[a][delta[q][a]].append(q)

    acc = frozenset(accepting)
    rej = frozenset(range(n)) - acc
    partition = [s for s in (acc, rej) if s]
    work = [s for s in (acc, rej) if s]
    while work:
        splitter = work.pop()
        for a in range(n_letters):
            x = set()
            for q in splitter:
                x.update(preimage[a][q])
            new_partition = []
            for block in partition:
                inter = block & x
                diff = block - x
                if inter and diff:
                    new_partition.extend((frozenset(inter), frozenset(diff)))
                    if block in work:
                        work.remove(block)
                        work.extend((frozenset(inter), frozenset(diff)))
                    else:
                        work.append(min((frozenset(inter), frozenset(diff)), key=len))
                else:
                    new_partition.append(block)
            partition = new_partition

    block_of = {}
    for i, block in enumerate(partition):
        for q in block:
            block_of[q] = i
    new_delta = []
    for block in partition:
        q = next(iter(block))
        new_delta.append([block_of[delta[q][a]] for a in range(n_letters)])
    new_q0 = block_of[q0]
    new_acc = {block_of[q] for q in accepting}
    return new_delta, new_q0, new_acc


def _canonicalize(formula, delta, q0, accepting, n_letters):
    """Drop unreachable states, renumber breadth-first, identify the trap."""
    order = [q0]
    seen = {q0}
    for q in order:
        for a in range(n_letters):
            t = delta[q][a]
            if t not in seen:
                seen.add(t)
                order.append(t)
    remap = {old: new for new, old in enumerate(order)}
    new_delta = [[remap[delta[old][a]] for a in range(n_letters)] for old in order]
    new_acc = frozenset(remap[q] for q in accepting if q in remap)
    trap = None
    for q in range(len(order)):
        if q not in new_acc and all(t == q for t in new_delta[q]):
            trap = q
            break
    return Dfa(len(order), formula.aps, new_delta, remap[q0], new_acc, trap)
