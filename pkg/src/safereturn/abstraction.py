"""Feature-based semi-MDP abstractions with option policies.

A semi-MDP is a :class:`LabeledMdp` over the feature states ``X'`` plus one
trap state (``bottom``) collecting the mass of option runs that never reach
another feature state.  Each macro action ``(x_f, x_t)`` owns an
:class:`OptionPolicy`: a low-level policy on the original model that starts
at ``x_f`` and stops on arrival at any other feature state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .automata import Dra
from .errors import EmptyFeatureSet
from .model import (LabeledMdp, _chain_graph, backward_reachable, expected_visits,
                    forward_reachable, solve_reach)
from .product import label_letters
from .synthesis import SafetyMode, inflow_coef, occupancy_lp, policy_from_occupancy

HALT = "halt"


def effective_features(d: Dra) -> frozenset:
    """Label-sets (over ``d.ap``) that drive some non-self transition."""
    out = set()
    for k in range(d.n_letters):
        if np.any(d.delta[:, k] != np.arange(d.n_states)):
            out.add(d.letter_set(k))
    return frozenset(out)


def feature_mask(m: LabeledMdp, d: Dra, theta: frozenset) -> np.ndarray:
    """States whose label, projected on ``d.ap``, is a non-empty member of ``theta``."""
    letters = label_letters(m, d)
    good = np.array([bool(k) and d.letter_set(k) in theta for k in range(d.n_letters)], dtype=bool)
    return good[letters]


@dataclass(eq=False)
class OptionPolicy:
    """Low-level closed-loop policy of one macro action.

    The rule is stored on ``region`` (states reachable from ``source`` before
    absorption): rows ``rows[ptr[i]:ptr[i+1]]`` with ``probs`` for region
    state ``region[i]``.  ``live[i]`` tells whether absorption at a feature
    state is still possible from ``region[i]``.
    """

    source: int
    target: int
    region: np.ndarray
    ptr: np.ndarray
    rows: np.ndarray
    probs: np.ndarray
    live: np.ndarray
    reach_prob: float
    expected_cost: float
    duration: float
    dist: dict
    safety_value: float = float("nan")

    def ends_at(self, x: int, feats: np.ndarray) -> bool:
        """Whether reaching ``x`` completes the macro action."""
        return bool(feats[x]) and (x != self.source or self.source == self.target)

    def rule(self, x: int):
        i = int(np.searchsorted(self.region, x))
        if i >= self.region.size or self.region[i] != x:
            return None
        return self.rows[self.ptr[i]:self.ptr[i + 1]], self.probs[self.ptr[i]:self.ptr[i + 1]]

    def row_probs(self, n_rows: int) -> np.ndarray:
        out = np.zeros(n_rows)
        out[self.rows] = self.probs
        return out

    def to_json(self) -> dict:
        return {
            "source": self.source, "target": self.target,
            "region": self.region.tolist(), "ptr": self.ptr.tolist(),
            "rows": self.rows.tolist(), "probs": self.probs.tolist(),
            "live": self.live.astype(int).tolist(),
            "reach_prob": self.reach_prob, "expected_cost": self.expected_cost,
            "duration": self.duration,
            "dist": [[-1 if k is None else k, v] for k, v in self.dist.items()],
            "safety_value": None if np.isnan(self.safety_value) else self.safety_value,
        }

    @classmethod
    def from_json(cls, d: dict) -> "OptionPolicy":
        return cls(d["source"], d["target"], np.array(d["region"], dtype=np.int64),
                   np.array(d["ptr"], dtype=np.int64), np.array(d["rows"], dtype=np.int64),
                   np.array(d["probs"], dtype=float), np.array(d["live"], dtype=bool),
                   d["reach_prob"], d["expected_cost"], d["duration"],
                   {None if k == -1 else int(k): v for k, v in d["dist"]},
                   float("nan") if d["safety_value"] is None else d["safety_value"])


@dataclass(eq=False)
class SemiMdp:
    mdp: LabeledMdp
    features: np.ndarray
    options: dict
    durations: np.ndarray
    removed: list = field(default_factory=list)

    @property
    def bottom(self) -> int:
        return int(self.features.size)

    @property
    def rejecting(self) -> np.ndarray:
        out = np.zeros(self.mdp.n_states, dtype=bool)
        out[self.bottom] = True
        return out

    def semi_index(self, x: int) -> int | None:
        i = int(np.searchsorted(self.features, x))
        return i if i < self.features.size and self.features[i] == x else None

    @property
    def n_macros(self) -> int:
        return sum(1 for o in self.options.values() if o is not None)


def _viable(m: LabeledMdp, ok: np.ndarray, sinks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Largest set within ``ok`` where some row keeps every successor inside.

    Sinks in ``ok`` are absorbing and always viable.  Returns the state mask
    and the rows of non-sink viable states that stay viable.
    """
    coo = m.trans.tocoo()
    keep = ok.copy()
    while True:
        bad = np.zeros(m.n_rows, dtype=bool)
        np.logical_or.at(bad, coo.row, ~keep[coo.col])
        rows = keep[m.row_state] & ~sinks[m.row_state] & ~bad
        has = np.zeros(m.n_states, dtype=bool)
        has[m.row_state[rows]] = True
        new = keep & (has | sinks)
        if np.array_equal(new, keep):
            return keep, rows
        keep = new


def _option_from_rows(m: LabeledMdp, x_f: int, x_t: int, probs: np.ndarray, sinks: np.ndarray,
                      v_ext: np.ndarray | None) -> OptionPolicy:
    """Absorption statistics of a low-level rule started at ``x_f``."""
    probs = np.where(sinks[m.row_state], 0.0, probs)
    w = sp.csr_matrix((probs, (m.row_state, np.arange(m.n_rows))), shape=(m.n_states, m.n_rows))
    p = (w @ m.trans).tocsr()
    p.eliminate_zeros()
    g = _chain_graph(p)
    region_mask = forward_reachable(g, [x_f])
    can_absorb = backward_reachable(g, np.flatnonzero(sinks))
    transient = region_mask & can_absorb & ~sinks
    z = expected_visits(p, transient, x_f)
    sink_idx = np.flatnonzero(sinks & region_mask)
    mass = np.asarray(p[:, sink_idx].T @ z).ravel()
    mass = np.clip(mass, 0.0, 1.0)
    dist = {int(s): float(v) for s, v in zip(sink_idx, mass) if v > 0}
    dist[None] = max(0.0, 1.0 - float(mass.sum()))
    c_pi = np.zeros(m.n_states)
    np.add.at(c_pi, m.row_state, probs * m.row_cost)
    region = np.flatnonzero(region_mask & ~sinks)
    counts = np.zeros(m.n_states, dtype=np.int64)
    nz = np.flatnonzero(probs > 0)
    np.add.at(counts, m.row_state[nz], 1)
    ptr = np.concatenate([[0], np.cumsum(counts[region])]).astype(np.int64)
    in_region = np.zeros(m.n_states, dtype=bool)
    in_region[region] = True
    rows = nz[in_region[m.row_state[nz]]]
    safety = float(z @ v_ext) if v_ext is not None else float("nan")
    return OptionPolicy(
        source=int(x_f), target=int(x_t), region=region, ptr=ptr, rows=rows,
        probs=probs[rows], live=can_absorb[region], reach_prob=dist.get(int(x_t), 0.0),
        expected_cost=float(z @ c_pi), duration=float(z.sum()), dist=dist, safety_value=safety,
    )


def _source_setup(m: LabeledMdp, feats: np.ndarray, x_f: int, forbidden: np.ndarray | None):
    sinks = feats.copy()
    sinks[x_f] = False
    if forbidden is None:
        row_mask = ~sinks[m.row_state]
        ok = np.ones(m.n_states, dtype=bool)
    else:
        ok, row_mask = _viable(m, ~forbidden, sinks)
    any_sink = sinks & ok
    _, to_any = solve_reach(m, any_sink, row_mask, min_cost=True) if any_sink.any() else (None, None)
    fallback = np.full(m.n_states, -1, dtype=np.int64)
    ok_rows = np.flatnonzero(row_mask)
    owners, first = np.unique(m.row_state[ok_rows], return_index=True)
    fallback[owners] = ok_rows[first]
    if to_any is not None:
        usable = (to_any >= 0) & row_mask[np.maximum(to_any, 0)]
        fallback[usable] = to_any[usable]
    return sinks, ok, row_mask, fallback


def _unconstrained_option(m, x_f, x_t, sinks, row_mask, fallback, v_ext):
    target = np.zeros(m.n_states, dtype=bool)
    target[x_t] = True
    v, choice = solve_reach(m, target, row_mask, min_cost=True)
    if v[x_f] <= 1e-12:
        return None, None
    rows = np.where(v > 0, choice, fallback)
    probs = np.zeros(m.n_rows)
    probs[rows[(rows >= 0) & ~sinks]] = 1.0
    return _option_from_rows(m, x_f, x_t, probs, sinks, v_ext), v


def _dwell_option(m: LabeledMdp, x_f: int, row_mask, v_ext) -> OptionPolicy | None:
    """Macro that stays put on the cheapest pure self-loop row of ``x_f``."""
    best = None
    for r in m.rows(x_f):
        if row_mask is not None and not row_mask[r]:
            continue
        succ = m.successors(r)[0]
        if np.all(succ == x_f) and (best is None or m.row_cost[r] < m.row_cost[best]):
            best = int(r)
    if best is None:
        return None
    return OptionPolicy(
        source=x_f, target=x_f, region=np.array([x_f]), ptr=np.array([0, 1]),
        rows=np.array([best]), probs=np.array([1.0]), live=np.array([True]), reach_prob=1.0,
        expected_cost=float(m.row_cost[best]), duration=1.0, dist={x_f: 1.0, None: 0.0},
        safety_value=float("nan") if v_ext is None else float(v_ext[x_f]),
    )


def _add_dwell(m, feats, options, row_masks, v_ext, chi_r=0.0):
    # sources without any outgoing macro may still wait in place
    have = {f for f, _ in options}
    for x_f, mask in row_masks.items():
        if x_f not in have:
            o = _dwell_option(m, x_f, mask, v_ext)
            if o is not None and not o.safety_value < chi_r - 1e-9:
                options[(x_f, x_f)] = o


def _assemble(m: LabeledMdp, feats: np.ndarray, options: dict, removed: list) -> SemiMdp:
    """Pack options into a LabeledMdp over feature indices plus the trap."""
    idx = np.flatnonzero(feats)
    k = idx.size
    pos = {int(x): i for i, x in enumerate(idx)}
    recs, opt_of_row, durations = [], [], []
    c_max = float(m.row_cost.max()) if m.n_rows else 1.0
    for i, x_f in enumerate(idx):
        mine = [o for (f, _), o in sorted(options.items()) if f == x_f]
        for o in mine:
            dist = [(pos[s] if s is not None else k, pr) for s, pr in o.dist.items() if pr > 0]
            recs.append((i, f"go{o.target}", max(o.expected_cost, 1e-12), dist))
            opt_of_row.append(o)
            durations.append(o.duration)
        if not mine:
            recs.append((i, HALT, c_max, [(k, 1.0)]))
            opt_of_row.append(None)
            durations.append(1.0)
    recs.append((k, HALT, c_max, [(k, 1.0)]))
    opt_of_row.append(None)
    durations.append(1.0)
    labels = [m.labels[x] for x in idx] + [frozenset()]
    coords = None if m.coords is None else [m.coords[x] for x in idx] + [(-1, -1)]
    init = pos.get(int(m.initial), 0)
    semi = LabeledMdp.from_transitions(k + 1, m.ap, labels, init, recs, coords)
    # from_transitions keeps the record order within a state
    return SemiMdp(semi, idx, {r: o for r, o in enumerate(opt_of_row)}, np.array(durations), removed)


def build_safe_semi_mdp(m: LabeledMdp, d: Dra, theta=None) -> SemiMdp:
    """Return-side abstraction: max-reach options between feature states."""
    theta = effective_features(d) if theta is None else theta
    feats = feature_mask(m, d, theta)
    if not feats.any():
        raise EmptyFeatureSet("no state carries an effective return feature")
    options, removed, masks = {}, [], {}
    for x_f in np.flatnonzero(feats):
        sinks, _, row_mask, fallback = _source_setup(m, feats, int(x_f), None)
        masks[int(x_f)] = row_mask
        for x_t in np.flatnonzero(feats):
            if x_t == x_f:
                continue
            o, _ = _unconstrained_option(m, int(x_f), int(x_t), sinks, row_mask, fallback, None)
            if o is None:
                removed.append((int(x_f), int(x_t)))
            else:
                options[(int(x_f), int(x_t))] = o
    _add_dwell(m, feats, options, masks, None)
    return _assemble(m, feats, options, removed)


def build_task_semi_mdp(m: LabeledMdp, d: Dra, v_ext: np.ndarray, chi_r: float,
                        mode: SafetyMode = SafetyMode.STATEWISE, theta=None) -> SemiMdp:
    """Task-side abstraction whose options respect the safe-return bound.

    Statewise: options only use rows that keep the run inside the viable
    part of ``{x : v_ext(x) >= chi_r}``.  Cumulative: the expected sum of
    ``v_ext`` along the option run must reach ``chi_r``; when the plain
    max-reach option misses it, an occupancy LP maximizes reach under that
    constraint.  Sources without any retained macro get a ``halt`` macro
    into the trap state.
    """
    theta = effective_features(d) if theta is None else theta
    feats = feature_mask(m, d, theta)
    feats[m.initial] = True
    v_ext = np.asarray(v_ext, dtype=float)
    mode = SafetyMode(mode)
    forbidden = v_ext < chi_r - 1e-12 if mode is SafetyMode.STATEWISE else None
    options, removed, masks = {}, [], {}
    for x_f in np.flatnonzero(feats):
        x_f = int(x_f)
        if forbidden is not None and forbidden[x_f]:
            removed.extend((x_f, int(t)) for t in np.flatnonzero(feats) if t != x_f)
            continue
        sinks, ok, row_mask, fallback = _source_setup(m, feats, x_f, forbidden)
        if forbidden is not None and not ok[x_f]:
            removed.extend((x_f, int(t)) for t in np.flatnonzero(feats) if t != x_f)
            continue
        masks[x_f] = row_mask
        for x_t in np.flatnonzero(feats):
            x_t = int(x_t)
            if x_t == x_f:
                continue
            o, v = _unconstrained_option(m, x_f, x_t, sinks, row_mask, fallback, v_ext)
            if o is not None and mode is SafetyMode.CUMULATIVE and o.safety_value < chi_r - 1e-9:
                o = _cumulative_option(m, x_f, x_t, sinks, row_mask, fallback, v, v_ext, chi_r)
            if o is None:
                removed.append((x_f, x_t))
            else:
                options[(x_f, x_t)] = o
    _add_dwell(m, feats, options, masks, v_ext, chi_r)
    return _assemble(m, feats, options, removed)


def _cumulative_option(m, x_f, x_t, sinks, row_mask, fallback, v, v_ext, chi_r):
    transient = (v > 0) & ~sinks
    lp = occupancy_lp(m, x_f, transient, row_mask)
    target = np.zeros(m.n_states, dtype=bool)
    target[x_t] = True
    reach_c = inflow_coef(m, lp.var_rows, target)
    safety_c = v_ext[m.row_state[lp.var_rows]]
    lp = lp.add_ub(-safety_c, -chi_r, "safety").with_objective(-reach_c)
    y = lp.solve()
    if y is None or reach_c @ y <= 1e-12:
        return None
    probs = policy_from_occupancy(m, lp.var_rows, y, np.maximum(fallback, 0))
    o = _option_from_rows(m, x_f, x_t, probs, sinks, v_ext)
    o.safety_value = float(safety_c @ y)
    return o


@dataclass(eq=False)
class ExtendedReturnValue:
    values: np.ndarray
    bridge: np.ndarray

    def __getitem__(self, x):
        return self.values[x]


def extend_return_value(m: LabeledMdp, semi_r: SemiMdp, v_semi: np.ndarray) -> ExtendedReturnValue:
    """Terminal-reward reachability bridging low-level states to ``v_semi``.

    ``v_semi[i]`` is the semi-product return value at feature ``i`` with the
    return automaton in its initial state.  Feature states keep exactly that
    value; every other state gets the best expected value collected at the
    first feature state it reaches.  ``bridge`` is the greedy row attaining it.
    """
    term = np.zeros(m.n_states, dtype=bool)
    term[semi_r.features] = True
    reward = np.zeros(m.n_states)
    reward[semi_r.features] = np.asarray(v_semi, dtype=float)[:semi_r.features.size]
    v, choice = solve_reach(m, term, reward=reward, min_cost=True)
    for x in np.flatnonzero(choice < 0):
        choice[x] = m.state_ptr[x]
    return ExtendedReturnValue(np.clip(v, 0.0, 1.0), choice)
