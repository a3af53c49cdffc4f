"""LTL formulas, a small text parser and exact evaluation on lasso words.

Derived operators are rewritten on construction so formulas only contain
``True``, ``Prop``, ``Not``, ``And``, ``Next`` and ``Until``.

Grammar (lowest precedence first)::

    impl   := or ('->' impl)?
    or     := and ('|' and)*
    and    := until ('&' until)*
    until  := unary ('U' until)?
    unary  := ('!' | 'X' | 'F' | 'G') unary | atom
    atom   := 'true' | 'false' | IDENT | '(' impl ')'
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParseError


class Formula:
    def props(self) -> frozenset:
        out = set()
        stack = [self]
        while stack:
            f = stack.pop()
            if isinstance(f, Prop):
                out.add(f.name)
            stack.extend(f.children())
        return frozenset(out)

    def children(self) -> tuple:
        return ()

    def holds(self, letter) -> bool:
        """Truth value of a propositional formula on one label-set."""
        if isinstance(self, TrueF):
            return True
        if isinstance(self, Prop):
            return self.name in letter
        if isinstance(self, Not):
            return not self.arg.holds(letter)
        if isinstance(self, And):
            return self.left.holds(letter) and self.right.holds(letter)
        raise ValueError("temporal operator in propositional context")

    @property
    def is_propositional(self) -> bool:
        return not isinstance(self, (Next, Until)) and all(c.is_propositional for c in self.children())


@dataclass(frozen=True)
class TrueF(Formula):
    def __str__(self):
        return "true"


@dataclass(frozen=True)
class Prop(Formula):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)

    def __str__(self):
        return f"!{_wrap(self.arg)}"


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)

    def __str__(self):
        return f"({self.left} & {self.right})"


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)

    def __str__(self):
        return f"X {_wrap(self.arg)}"


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)

    def __str__(self):
        return f"({self.left} U {self.right})"


def _wrap(f: Formula) -> str:
    s = str(f)
    return s if isinstance(f, (TrueF, Prop, Not)) or s.startswith("(") else f"({s})"


TRUE = TrueF()
FALSE = Not(TRUE)


def lor(a: Formula, b: Formula) -> Formula:
    return Not(And(Not(a), Not(b)))


def implies(a: Formula, b: Formula) -> Formula:
    return lor(Not(a), b)


def eventually(a: Formula) -> Formula:
    return Until(TRUE, a)


def always(a: Formula) -> Formula:
    return Not(eventually(Not(a)))


def conj(fs: Sequence[Formula]) -> Formula:
    fs = list(fs)
    if not fs:
        return TRUE
    out = fs[0]
    for f in fs[1:]:
        out = And(out, f)
    return out


def disj(fs: Sequence[Formula]) -> Formula:
    fs = list(fs)
    if not fs:
        return FALSE
    out = fs[0]
    for f in fs[1:]:
        out = lor(out, f)
    return out


_TOKEN = re.compile(r"\s*(->|[()!&|]|[A-Za-z_][A-Za-z0-9_]*)")
_UNARY = {"!": Not, "X": Next, "F": eventually, "G": always}


def parse_ltl(text: str) -> Formula:
    toks, pos = [], 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character at offset {pos}: {text[pos:pos + 10]!r}")
        toks.append(m.group(1))
        pos = m.end()
    p = _Parser(toks)
    f = p.impl()
    if p.i != len(toks):
        raise ParseError(f"trailing input at token {toks[p.i]!r}")
    return f


class _Parser:
    def __init__(self, toks):
        self.toks, self.i = toks, 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, want=None):
        t = self.peek()
        if t is None or (want is not None and t != want):
            raise ParseError(f"expected {want or 'token'}, got {t!r}")
        self.i += 1
        return t

    def impl(self):
        left = self.orr()
        if self.peek() == "->":
            self.take()
            return implies(left, self.impl())
        return left

    def orr(self):
        f = self.andd()
        while self.peek() == "|":
            self.take()
            f = lor(f, self.andd())
        return f

    def andd(self):
        f = self.until()
        while self.peek() == "&":
            self.take()
            f = And(f, self.until())
        return f

    def until(self):
        f = self.unary()
        if self.peek() == "U":
            self.take()
            return Until(f, self.until())
        return f

    def unary(self):
        t = self.peek()
        if t in _UNARY:
            self.take()
            return _UNARY[t](self.unary())
        return self.atom()

    def atom(self):
        t = self.take()
        if t == "(":
            f = self.impl()
            self.take(")")
            return f
        if t == "true":
            return TRUE
        if t == "false":
            return FALSE
        if t in _UNARY or t in ("U", ")", "&", "|", "->"):
            raise ParseError(f"unexpected token {t!r}")
        return Prop(t)


@dataclass(frozen=True)
class LassoWord:
    prefix: tuple
    cycle: tuple

    def __post_init__(self):
        if len(self.cycle) < 1:
            raise ValueError("lasso cycle must be nonempty")
        object.__setattr__(self, "prefix", tuple(frozenset(l) for l in self.prefix))
        object.__setattr__(self, "cycle", tuple(frozenset(l) for l in self.cycle))

    def __len__(self):
        return len(self.prefix) + len(self.cycle)

    def letter(self, i: int) -> frozenset:
        n = len(self.prefix)
        return self.prefix[i] if i < n else self.cycle[(i - n) % len(self.cycle)]


def ltl_eval_lasso(f: Formula, w: LassoWord) -> bool:
    """Exact truth of ``f`` at position 0 of ``prefix . cycle^omega``.

    Every suffix of a lasso equals the suffix at one of ``len(w)`` positions,
    so each subformula is a boolean vector over those positions; ``Until`` is
    the least fixpoint of its expansion law over the lasso successor graph.
    """
    n = len(w)
    succ = list(range(1, n)) + [len(w.prefix)]
    letters = [w.letter(i) for i in range(n)]
    memo: dict = {}

    def ev(g: Formula) -> list:
        if g in memo:
            return memo[g]
        if isinstance(g, TrueF):
            out = [True] * n
        elif isinstance(g, Prop):
            out = [g.name in l for l in letters]
        elif isinstance(g, Not):
            out = [not v for v in ev(g.arg)]
        elif isinstance(g, And):
            a, b = ev(g.left), ev(g.right)
            out = [x and y for x, y in zip(a, b)]
        elif isinstance(g, Next):
            a = ev(g.arg)
            out = [a[succ[i]] for i in range(n)]
        elif isinstance(g, Until):
            a, b = ev(g.left), ev(g.right)
            out = list(b)
            changed = True
            while changed:
                changed = False
                for i in range(n - 1, -1, -1):
                    if not out[i] and a[i] and out[succ[i]]:
                        out[i] = True
                        changed = True
        else:
            raise TypeError(f"unknown formula node {g!r}")
        memo[g] = out
        return out

    return ev(f)[0]


def ltl_eval_batch(f: Formula, ap: Sequence[str], letters, prefix_len: int):
    """Vectorized :func:`ltl_eval_lasso` over lassos of one shape.

    ``letters`` is an integer array of shape ``(batch, n)`` holding letter
    bitmasks over ``ap``; positions ``prefix_len..n-1`` form the cycle.
    """
    letters = np.asarray(letters)
    n = letters.shape[1]
    succ = np.array(list(range(1, n)) + [prefix_len])
    bit = {a: i for i, a in enumerate(ap)}
    memo: dict = {}

    def ev(g):
        if g in memo:
            return memo[g]
        if isinstance(g, TrueF):
            out = np.ones(letters.shape, dtype=bool)
        elif isinstance(g, Prop):
            out = (letters >> bit[g.name] & 1).astype(bool)
        elif isinstance(g, Not):
            out = ~ev(g.arg)
        elif isinstance(g, And):
            out = ev(g.left) & ev(g.right)
        elif isinstance(g, Next):
            out = ev(g.arg)[:, succ]
        elif isinstance(g, Until):
            a, b = ev(g.left), ev(g.right)
            out = b.copy()
            for _ in range(n):
                out = b | (a & out[:, succ])
        else:
            raise TypeError(f"unknown formula node {g!r}")
        memo[g] = out
        return out

    return ev(f)[:, 0]
