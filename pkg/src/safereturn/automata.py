"""Deterministic Rabin automata: templates, intersection, lasso acceptance, HOA io.

Letters are subsets of ``ap`` encoded as bitmasks (bit ``i`` set iff ``ap[i]``
holds), so ``delta`` is an integer table of shape ``(n_states, 2**len(ap))``.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from itertools import product as iproduct
from typing import Sequence

import numpy as np

from . import ltl
from .errors import (AlphabetMismatch, NondeterministicAutomaton, ParseError,
                     UnsupportedAcceptance, UnsupportedTemplate)
from .ltl import Formula, LassoWord


@dataclass(frozen=True, eq=False)
class Dra:
    ap: tuple
    delta: np.ndarray
    initial: int
    pairs: tuple
    names: tuple | None = None

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=np.int64)
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "ap", tuple(self.ap))
        object.__setattr__(self, "pairs", tuple((frozenset(h), frozenset(i)) for h, i in self.pairs))
        if d.shape != (d.shape[0], 1 << len(self.ap)):
            raise ValueError("delta must have one column per letter")
        if not self.pairs:
            raise ValueError("a Rabin automaton needs at least one pair")
        if d.size and (d.min() < 0 or d.max() >= d.shape[0]):
            raise ValueError("delta target out of range")

    @property
    def n_states(self) -> int:
        return self.delta.shape[0]

    @property
    def n_letters(self) -> int:
        return self.delta.shape[1]

    def letter(self, label) -> int:
        """Bitmask of ``label`` projected onto this automaton's AP."""
        return sum(1 << i for i, a in enumerate(self.ap) if a in label)

    def letter_set(self, k: int) -> frozenset:
        return frozenset(a for i, a in enumerate(self.ap) if k >> i & 1)

    def step(self, q: int, label) -> int:
        return int(self.delta[q, self.letter(label)])

    @property
    def n_edges(self) -> int:
        return sum(len(set(row)) for row in self.delta.tolist())


def dra_accepts_lasso(d: Dra, w: LassoWord) -> bool:
    """Run ``d`` on the lasso and test the Rabin condition on the loop.

    The run is a pure function of (state, cycle index) once inside the
    cycle, so a repeat occurs within ``n_states * len(cycle)`` steps.
    """
    q = d.initial
    for l in w.prefix:
        q = d.step(q, l)
    cyc = [d.letter(l) for l in w.cycle]
    seen: dict = {}
    trail = []
    i = 0
    while (q, i) not in seen:
        seen[(q, i)] = len(trail)
        trail.append(q)
        q = int(d.delta[q, cyc[i]])
        i = (i + 1) % len(cyc)
    loop = set(trail[seen[(q, i)]:])
    return any(not (loop & h) and (loop & acc) for h, acc in d.pairs)


def dra_accepts_batch(d: Dra, letters, prefix_len: int) -> np.ndarray:
    """Vectorized :func:`dra_accepts_lasso` for lassos of one shape.

    ``letters`` has shape ``(batch, n)`` with bitmasks over ``d.ap``.  After
    ``n_states`` passes over the cycle the state at the cycle start is
    periodic with period at most ``n_states``, so the next ``n_states``
    passes visit exactly the loop states.
    """
    letters = np.asarray(letters)
    q = np.full(letters.shape[0], d.initial, dtype=np.int64)
    for t in range(prefix_len):
        q = d.delta[q, letters[:, t]]
    cyc = letters[:, prefix_len:]
    for _ in range(d.n_states):
        for t in range(cyc.shape[1]):
            q = d.delta[q, cyc[:, t]]
    seen = np.zeros((letters.shape[0], d.n_states), dtype=bool)
    rows = np.arange(letters.shape[0])
    for _ in range(d.n_states):
        for t in range(cyc.shape[1]):
            seen[rows, q] = True
            q = d.delta[q, cyc[:, t]]
    ok = np.zeros(letters.shape[0], dtype=bool)
    for h, acc in d.pairs:
        hm = np.zeros(d.n_states, dtype=bool)
        hm[list(h)] = True
        am = np.zeros(d.n_states, dtype=bool)
        am[list(acc)] = True
        ok |= ~(seen & hm).any(axis=1) & (seen & am).any(axis=1)
    return ok


def lasso_shapes(n_ap: int, max_prefix: int, max_cycle: int):
    """Yield ``(prefix_len, letters)`` covering every lasso up to the limits."""
    k = 1 << n_ap
    for lp in range(max_prefix + 1):
        for lc in range(1, max_cycle + 1):
            n = lp + lc
            idx = np.arange(k ** n, dtype=np.int64)
            letters = np.stack([(idx // k ** j) % k for j in range(n)], axis=1)
            yield lp, letters


# ---------------------------------------------------------------- templates


@dataclass(frozen=True)
class Surveillance:
    props: tuple


@dataclass(frozen=True)
class Reach:
    p: object


@dataclass(frozen=True)
class SeqReach:
    p: object
    q: object


@dataclass(frozen=True)
class Response:
    p: object
    q: object


@dataclass(frozen=True)
class UntilGuard:
    p: object
    q: object


@dataclass(frozen=True)
class SafeReturn:
    prefix: object
    stay: tuple


@dataclass(frozen=True)
class AlwaysTrue:
    pass


def _pf(x) -> Formula:
    """Propositional argument: a Formula or a string in the LTL grammar."""
    f = ltl.parse_ltl(x) if isinstance(x, str) else x
    if not isinstance(f, Formula) or not f.is_propositional:
        raise UnsupportedTemplate(f"template argument {x!r} must be propositional")
    return f


def _stay_formula(stay) -> Formula:
    if isinstance(stay, (str, Formula)):
        return _pf(stay)
    return ltl.disj([_pf(s) for s in stay])


def template_formula(kind) -> Formula:
    """The LTL formula a template denotes."""
    if isinstance(kind, AlwaysTrue):
        return ltl.TRUE
    if isinstance(kind, Surveillance):
        if not kind.props:
            raise UnsupportedTemplate("surveillance needs at least one proposition")
        return ltl.conj([ltl.always(ltl.eventually(_pf(p))) for p in kind.props])
    if isinstance(kind, Reach):
        return ltl.eventually(_pf(kind.p))
    if isinstance(kind, SeqReach):
        return ltl.eventually(ltl.And(_pf(kind.p), ltl.eventually(_pf(kind.q))))
    if isinstance(kind, Response):
        return ltl.always(ltl.implies(_pf(kind.p), ltl.eventually(_pf(kind.q))))
    if isinstance(kind, UntilGuard):
        p, q = _pf(kind.p), _pf(kind.q)
        return ltl.always(ltl.implies(p, ltl.Until(ltl.Not(p), q)))
    if isinstance(kind, SafeReturn):
        if not isinstance(kind.prefix, (Reach, SeqReach, AlwaysTrue)):
            raise UnsupportedTemplate("safe-return prefix must be a reach-type template")
        return ltl.And(template_formula(kind.prefix), ltl.eventually(ltl.always(_stay_formula(kind.stay))))
    raise UnsupportedTemplate(f"unknown template {kind!r}")


def _explore(ap: Sequence[str], init, step, accept_of) -> Dra:
    """Build a Dra by BFS over hashable monitor states.

    ``step(state, letter_set) -> state``; ``accept_of(states) -> pairs`` maps
    the final state list to (H, I) index sets.
    """
    ap = tuple(ap)
    letters = [frozenset(a for i, a in enumerate(ap) if k >> i & 1) for k in range(1 << len(ap))]
    index = {init: 0}
    order = [init]
    rows = []
    qu = deque([init])
    while qu:
        s = qu.popleft()
        row = []
        for l in letters:
            t = step(s, l)
            if t not in index:
                index[t] = len(order)
                order.append(t)
                qu.append(t)
            row.append(index[t])
        rows.append((index[s], row))
    delta = np.zeros((len(order), len(letters)), dtype=np.int64)
    for i, row in rows:
        delta[i] = row
    return Dra(ap, delta, 0, accept_of(order), tuple(str(s) for s in order))


def _sorted_ap(*fs: Formula) -> tuple:
    out = set()
    for f in fs:
        out |= f.props()
    return tuple(sorted(out))


def template_dra(kind) -> Dra:
    """Hand-built automaton for a template; AP is the template's propositions."""
    template_formula(kind)  # validates arguments
    if isinstance(kind, AlwaysTrue):
        return Dra((), np.zeros((1, 1), dtype=np.int64), 0, [((), (0,))], ("true",))
    if isinstance(kind, Reach):
        p = _pf(kind.p)
        return _explore(_sorted_ap(p), 0, lambda s, l: 1 if s == 1 or p.holds(l) else 0,
                        lambda st: [((), [i for i, s in enumerate(st) if s == 1])])
    if isinstance(kind, SeqReach):
        p, q = _pf(kind.p), _pf(kind.q)

        def step(s, l):
            if s == 2:
                return 2
            if s == 0 and not p.holds(l):
                return 0
            return 2 if q.holds(l) else 1

        return _explore(_sorted_ap(p, q), 0, step, lambda st: [((), [i for i, s in enumerate(st) if s == 2])])
    if isinstance(kind, Surveillance):
        ps = [_pf(p) for p in kind.props]
        k = len(ps)

        def step(s, l):
            j, wraps = s[0], False
            for _ in range(k):
                if not ps[j].holds(l):
                    break
                j = (j + 1) % k
                wraps = wraps or j == 0
            return (j, wraps)

        return _explore(_sorted_ap(*ps), (0, False), step,
                        lambda st: [((), [i for i, s in enumerate(st) if s[1]])])
    if isinstance(kind, Response):
        p, q = _pf(kind.p), _pf(kind.q)

        def step(s, l):
            pending = (s == 1 or p.holds(l)) and not q.holds(l)
            return 1 if pending else 0

        return _explore(_sorted_ap(p, q), 0, step, lambda st: [((), [i for i, s in enumerate(st) if s == 0])])
    if isinstance(kind, UntilGuard):
        # at a p-position (!p) U q can only hold through q at that same position
        p, q = _pf(kind.p), _pf(kind.q)

        def step(s, l):
            return 1 if s == 1 or (p.holds(l) and not q.holds(l)) else 0

        return _explore(_sorted_ap(p, q), 0, step, lambda st: [((), [i for i, s in enumerate(st) if s == 0])])
    if isinstance(kind, SafeReturn):
        pre = template_dra(kind.prefix)
        stay = _stay_formula(kind.stay)
        (h0, acc0), = pre.pairs
        ap = tuple(sorted(set(pre.ap) | stay.props()))

        def step(s, l):
            return (int(pre.delta[s[0], pre.letter(l)]), stay.holds(l))

        def pairs(st):
            bad = [i for i, s in enumerate(st) if not s[1] or s[0] in h0]
            good = [i for i, s in enumerate(st) if s[1] and s[0] in acc0]
            return [(bad, good)]

        return _explore(ap, (pre.initial, False), step, pairs)
    raise UnsupportedTemplate(f"unknown template {kind!r}")


def parse_template(text: str):
    """Parse CLI template syntax, e.g. ``surveil(r1,r2)``, ``safe_return(reach(ex); bs)``."""
    m = re.fullmatch(r"\s*(\w+)\s*\((.*)\)\s*", text)
    if not m:
        raise UnsupportedTemplate(f"cannot parse template {text!r}")
    name, body = m.group(1).lower(), m.group(2)
    if name == "safe_return":
        if ";" in body:
            inner, stay = body.rsplit(";", 1)
            prefix = parse_template(inner) if inner.strip() else AlwaysTrue()
        else:
            prefix, stay = AlwaysTrue(), body
        return SafeReturn(prefix, tuple(s.strip() for s in stay.split(",") if s.strip()))
    args = [a.strip() for a in body.split(",")] if body.strip() else []
    table = {"surveil": lambda a: Surveillance(tuple(a)), "reach": lambda a: Reach(*a),
             "seq_reach": lambda a: SeqReach(*a), "response": lambda a: Response(*a),
             "until_guard": lambda a: UntilGuard(*a), "true": lambda a: AlwaysTrue()}
    if name not in table:
        raise UnsupportedTemplate(f"unknown template {name!r}")
    try:
        return table[name](args)
    except TypeError as exc:
        raise UnsupportedTemplate(f"bad arguments for {name}: {exc}") from None


# ---------------------------------------------------------------- intersection


def lift_ap(d: Dra, ap: Sequence[str]) -> Dra:
    """Same language over a larger alphabet (extra propositions ignored)."""
    ap = tuple(ap)
    if not set(d.ap) <= set(ap):
        raise AlphabetMismatch(f"{sorted(set(d.ap) - set(ap))} missing from target alphabet")
    cols = [d.letter(frozenset(a for i, a in enumerate(ap) if k >> i & 1)) for k in range(1 << len(ap))]
    return Dra(ap, d.delta[:, cols], d.initial, d.pairs, d.names)


def dra_intersection(a: Dra, b: Dra) -> Dra:
    """Rabin automaton for L(a) & L(b).

    Each pair combination (i, j) becomes one generalized pair with two
    infinitely-often sets, degeneralized by a flag bit that is raised on an
    ``I^a_i`` state and consumed on an ``I^b_j`` state.  Bounds: at most
    ``Na * Nb`` pairs and ``|Qa| * |Qb| * 2**(Na*Nb)`` states (reachable part
    only is built).
    """
    if set(a.ap) != set(b.ap):
        raise AlphabetMismatch(f"alphabets differ: {a.ap} vs {b.ap}")
    b = lift_ap(b, a.ap)
    combos = [(ha, ia, hb, ib) for ha, ia in a.pairs for hb, ib in b.pairs]

    def flags_for(prev_flags, prev_qb, qa):
        out = []
        for k, (_, ia, _, ib) in enumerate(combos):
            f = prev_flags[k] if prev_flags is not None else 0
            if f == 1 and (prev_flags is None or prev_qb not in ib):
                out.append(1)
            else:
                out.append(1 if qa in ia else 0)
        return tuple(out)

    init = (a.initial, b.initial, flags_for(None, None, a.initial))
    letters = range(a.n_letters)
    index = {init: 0}
    order = [init]
    qu = deque([init])
    rows = {}
    while qu:
        s = qu.popleft()
        qa, qb, fl = s
        row = []
        for k in letters:
            na, nb = int(a.delta[qa, k]), int(b.delta[qb, k])
            t = (na, nb, flags_for(fl, qb, na))
            if t not in index:
                index[t] = len(order)
                order.append(t)
                qu.append(t)
            row.append(index[t])
        rows[index[s]] = row
    delta = np.array([rows[i] for i in range(len(order))], dtype=np.int64)
    pairs = []
    for k, (ha, _, hb, ib) in enumerate(combos):
        h = [i for i, (qa, qb, _) in enumerate(order) if qa in ha or qb in hb]
        acc = [i for i, (qa, qb, fl) in enumerate(order) if fl[k] == 1 and qb in ib]
        pairs.append((h, acc))
    return Dra(a.ap, delta, 0, pairs)


# ---------------------------------------------------------------- HOA v1


def _tokenize_label(s: str):
    return re.findall(r"\d+|[tf!&|()]", s)


def _eval_label(tokens, letter: int) -> bool:
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take():
        nonlocal pos
        t = peek()
        if t is None:
            raise ParseError("truncated label expression")
        pos += 1
        return t

    def orr():
        v = andd()
        while peek() == "|":
            take()
            v = andd() or v
        return v

    def andd():
        v = unary()
        while peek() == "&":
            take()
            v = unary() and v
        return v

    def unary():
        t = take()
        if t == "!":
            return not unary()
        if t == "(":
            v = orr()
            if take() != ")":
                raise ParseError("unbalanced parenthesis in label")
            return v
        if t == "t":
            return True
        if t == "f":
            return False
        if t.isdigit():
            return bool(letter >> int(t) & 1)
        raise ParseError(f"bad label token {t!r}")

    v = orr()
    if pos != len(tokens):
        raise ParseError("trailing tokens in label")
    return v


def parse_hoa(text: str) -> Dra:
    """Parse the deterministic, state-based Rabin subset of HOA v1."""
    lines = [ln.strip() for ln in text.splitlines()]
    if "--BODY--" not in lines:
        raise ParseError("missing --BODY--")
    b = lines.index("--BODY--")
    header, body = lines[:b], lines[b + 1:]
    if not header or not header[0].startswith("HOA:") or header[0].split()[1] != "v1":
        raise ParseError("missing 'HOA: v1' header")
    n_states = None
    start = []
    ap = None
    acc_name = None
    acc_text = None
    for ln in header[1:]:
        if not ln:
            continue
        key, _, val = ln.partition(":")
        val = val.strip()
        if key == "States":
            n_states = int(val)
        elif key == "Start":
            if "&" in val:
                raise NondeterministicAutomaton("conjunctive initial states")
            start.append(int(val))
        elif key == "AP":
            parts = val.split(None, 1)
            names = re.findall(r'"([^"]*)"', parts[1] if len(parts) > 1 else "")
            if int(parts[0]) != len(names):
                raise ParseError("AP count does not match names")
            ap = tuple(names)
        elif key == "acc-name":
            acc_name = val.split()
        elif key == "Acceptance":
            acc_text = val
    if ap is None or acc_text is None:
        raise ParseError("AP and Acceptance headers are required")
    if not acc_name or acc_name[0] != "Rabin":
        raise UnsupportedAcceptance(f"acc-name {acc_name!r} is not Rabin")
    if len(start) != 1:
        raise NondeterministicAutomaton(f"expected exactly one Start state, got {len(start)}")
    m = re.match(r"(\d+)\s*(.*)", acc_text)
    if not m:
        raise ParseError("malformed Acceptance line")
    pair_sets = []
    for disj in m.group(2).split("|"):
        fins = re.findall(r"Fin\((\d+)\)", disj)
        infs = re.findall(r"Inf\((\d+)\)", disj)
        if len(infs) != 1 or len(fins) > 1 or re.search(r"!", disj):
            raise UnsupportedAcceptance(f"non-Rabin disjunct {disj.strip()!r}")
        pair_sets.append((int(fins[0]) if fins else None, int(infs[0])))
    if not pair_sets:
        raise UnsupportedAcceptance("no Rabin pairs")

    n_letters = 1 << len(ap)
    edges: dict = {}
    acc_of: dict = {}
    cur = None
    implicit_k = 0
    for ln in body:
        if not ln or ln == "--END--":
            continue
        if ln.startswith("State:"):
            mm = re.match(r"State:\s*(?:\[[^\]]*\]\s*)?(\d+)\s*(\"[^\"]*\")?\s*(\{[^}]*\})?", ln)
            if not mm:
                raise ParseError(f"bad State line {ln!r}")
            cur = int(mm.group(1))
            acc_of[cur] = {int(t) for t in re.findall(r"\d+", mm.group(3) or "")}
            edges.setdefault(cur, [])
            implicit_k = 0
            continue
        if cur is None:
            raise ParseError("edge before State line")
        mm = re.match(r"(?:\[([^\]]*)\])?\s*(\d+)\s*(\{[^}]*\})?\s*$", ln)
        if not mm:
            raise ParseError(f"bad edge {ln!r}")
        if mm.group(3):
            raise UnsupportedAcceptance("transition-based acceptance is not supported")
        dst = int(mm.group(2))
        if mm.group(1) is None:
            letters = [implicit_k]
            implicit_k += 1
        else:
            toks = _tokenize_label(mm.group(1))
            letters = [k for k in range(n_letters) if _eval_label(toks, k)]
        edges[cur].extend((k, dst) for k in letters)

    if n_states is None:
        n_states = max([*edges, *(d for es in edges.values() for _, d in es), start[0]]) + 1
    delta = np.full((n_states, n_letters), -1, dtype=np.int64)
    for q, es in edges.items():
        if q >= n_states:
            raise ParseError(f"state {q} exceeds declared count")
        for k, dst in es:
            if dst >= n_states:
                raise ParseError(f"edge target {dst} exceeds declared count")
            if delta[q, k] >= 0 and delta[q, k] != dst:
                raise NondeterministicAutomaton(f"state {q} has two successors on letter {k}")
            delta[q, k] = dst
    if (delta < 0).any():
        sink = n_states
        delta = np.vstack([delta, np.full((1, n_letters), sink)])
        delta[delta < 0] = sink
    pairs = []
    for fin, inf in pair_sets:
        h = [q for q, s in acc_of.items() if fin is not None and fin in s]
        i = [q for q, s in acc_of.items() if inf in s]
        pairs.append((h, i))
    return Dra(ap, delta, start[0], pairs)


def _minterm(k: int, n_ap: int) -> str:
    return "&".join(str(i) if k >> i & 1 else f"!{i}" for i in range(n_ap))


def serialize_hoa(d: Dra, name: str = "") -> str:
    """Write ``d`` as state-based Rabin HOA with explicit labels."""
    n = len(d.pairs)
    acc = " | ".join(f"(Fin({2 * i})&Inf({2 * i + 1}))" for i in range(n))
    out = ["HOA: v1"]
    if name:
        out.append(f'name: "{name}"')
    out += [
        f"States: {d.n_states}",
        f"Start: {d.initial}",
        f"AP: {len(d.ap)}" + "".join(f' "{a}"' for a in d.ap),
        f"acc-name: Rabin {n}",
        f"Acceptance: {2 * n} {acc}",
        "properties: deterministic complete state-acc",
        "--BODY--",
    ]
    for q in range(d.n_states):
        sets = [2 * i for i, (h, _) in enumerate(d.pairs) if q in h]
        sets += [2 * i + 1 for i, (_, a) in enumerate(d.pairs) if q in a]
        tag = " {" + " ".join(map(str, sorted(sets))) + "}" if sets else ""
        out.append(f"State: {q}{tag}")
        by_dst: dict = {}
        for k in range(d.n_letters):
            by_dst.setdefault(int(d.delta[q, k]), []).append(k)
        for dst, ks in sorted(by_dst.items()):
            if len(ks) == d.n_letters:
                label = "t"
            else:
                label = " | ".join(f"({_minterm(k, len(d.ap))})" if d.ap else "t" for k in ks)
            out.append(f"[{label}] {dst}")
    out.append("--END--")
    return "\n".join(out) + "\n"


def all_lassos(ap: Sequence[str], max_prefix: int, max_cycle: int):
    """Every lasso over 2^ap with the given length limits."""
    letters = [frozenset(a for i, a in enumerate(ap) if k >> i & 1) for k in range(1 << len(ap))]
    for lp in range(max_prefix + 1):
        for pre in iproduct(letters, repeat=lp):
            for lc in range(1, max_cycle + 1):
                for cyc in iproduct(letters, repeat=lc):
                    yield LassoWord(pre, cyc)


def random_lasso(rng: np.random.Generator, ap: Sequence[str], max_prefix: int = 8, max_cycle: int = 6) -> LassoWord:
    n = len(ap)

    def draw(k):
        masks = rng.integers(0, 1 << n, size=k) if n else np.zeros(k, dtype=int)
        return [frozenset(a for i, a in enumerate(ap) if int(m) >> i & 1) for m in masks]

    return LassoWord(draw(int(rng.integers(0, max_prefix + 1))), draw(int(rng.integers(1, max_cycle + 1))))
