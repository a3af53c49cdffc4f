"""Product of a labeled MDP with a DRA, and accepting maximal end components."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .automata import Dra
from .errors import AlphabetMismatch
from .model import LabeledMdp, SparseMdp, _row_graph, forward_reachable


@dataclass(frozen=True, eq=False)
class ProductMdp(SparseMdp):
    """Reachable part of M x A; state ``s`` stands for ``(xs[s], qs[s])``.

    ``row_src[r]`` is the model row a product row copies.  ``rejecting``
    marks states whose model state was declared rejecting (trap states of a
    semi-MDP); they never belong to an accepting end component.
    """

    model: LabeledMdp = None
    dra: Dra = None
    xs: np.ndarray = None
    qs: np.ndarray = None
    initial: int = 0
    row_src: np.ndarray = None
    h_masks: tuple = ()
    i_masks: tuple = ()
    rejecting: np.ndarray = None
    index: dict = field(default_factory=dict)

    def state_of(self, x: int, q: int) -> int | None:
        return self.index.get((int(x), int(q)))

    def to_json(self) -> dict:
        return {
            "states": [[int(x), int(q)] for x, q in zip(self.xs, self.qs)],
            "initial": self.initial,
            "pairs": [{"H": np.flatnonzero(h).tolist(), "I": np.flatnonzero(i).tolist()}
                      for h, i in zip(self.h_masks, self.i_masks)],
            "rejecting": np.flatnonzero(self.rejecting).tolist(),
            "rows": [{"state": int(s), "action": a, "cost": float(c),
                      "dist": [[int(y), float(p)] for y, p in zip(*self.successors(r))]}
                     for r, (s, a, c) in enumerate(zip(self.row_state, self.row_action, self.row_cost))],
        }


def label_letters(m: LabeledMdp, d: Dra) -> np.ndarray:
    """Letter index of every model state under ``d``'s alphabet."""
    missing = set(d.ap) - set(m.ap)
    if missing:
        raise AlphabetMismatch(f"automaton propositions {sorted(missing)} not declared by the model")
    return np.array([d.letter(l) for l in m.labels], dtype=np.int64)


def build_product(m: LabeledMdp, d: Dra, roots=None, rejecting=None) -> ProductMdp:
    """Reachable product with automaton successor ``delta(q, L(x))``.

    ``roots`` lists ``(x, q)`` start pairs (default the single initial pair);
    ``rejecting`` is an optional model-state mask.
    """
    nq = d.n_states
    letters = label_letters(m, d)
    qnext = d.delta[:, letters].T  # (n_states, nq): successor of (x, q)
    if roots is None:
        roots = [(m.initial, d.initial)]
    roots = [(int(x), int(q)) for x, q in roots]

    # full product, rows of (x, q) ordered like the rows of x
    nr = m.n_rows
    counts = np.diff(m.state_ptr)
    coo = m.trans.tocoo()
    r_state = m.row_state
    k_in_state = np.arange(nr) - m.state_ptr[r_state]
    full_ptr = np.concatenate([[0], np.cumsum(np.repeat(counts, nq))])

    def prow(r, q):
        x = r_state[r]
        return full_ptr[x * nq + q] + k_in_state[r]

    rows, cols, vals = [], [], []
    for q in range(nq):
        rows.append(prow(coo.row, q))
        cols.append(coo.col * nq + qnext[r_state[coo.row], q])
        vals.append(coo.data)
    full = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(nr * nq, m.n_states * nq))
    full_src = np.empty(nr * nq, dtype=np.int64)
    for q in range(nq):
        full_src[prow(np.arange(nr), q)] = np.arange(nr)
    full_sm = SparseMdp(m.n_states * nq, full_ptr.astype(np.int64), (), np.zeros(0), full)
    object.__setattr__(full_sm, "row_action", tuple(range(nr * nq)))
    g = _row_graph(full_sm, np.ones(nr * nq, dtype=bool))
    reach = forward_reachable(g, [x * nq + q for x, q in roots])
    keep = np.flatnonzero(reach)
    new_id = np.full(m.n_states * nq, -1, dtype=np.int64)
    new_id[keep] = np.arange(keep.size)
    keep_rows = np.concatenate([np.arange(full_ptr[s], full_ptr[s + 1]) for s in keep]) if keep.size else np.zeros(0, int)
    sub = full[keep_rows][:, keep].tocsr()
    sub.sort_indices()
    src = full_src[keep_rows]
    ptr = np.concatenate([[0], np.cumsum(np.repeat(counts, nq)[keep])]).astype(np.int64)
    xs, qs = keep // nq, keep % nq
    rej = np.zeros(keep.size, dtype=bool)
    if rejecting is not None:
        rej = np.asarray(rejecting, dtype=bool)[xs]
    h_masks = tuple(np.isin(qs, list(h)) for h, _ in d.pairs)
    i_masks = tuple(np.isin(qs, list(i)) for _, i in d.pairs)
    x0, q0 = roots[0]
    return ProductMdp(
        n_states=int(keep.size),
        state_ptr=ptr,
        row_action=tuple(m.row_action[r] for r in src),
        row_cost=m.row_cost[src].copy(),
        trans=sub,
        model=m,
        dra=d,
        xs=xs,
        qs=qs,
        initial=int(new_id[x0 * nq + q0]),
        row_src=src,
        h_masks=h_masks,
        i_masks=i_masks,
        rejecting=rej,
        index={(int(x), int(q)): i for i, (x, q) in enumerate(zip(xs, qs))},
    )


@dataclass(frozen=True, eq=False)
class Component:
    """Closed, strongly connected state set with its allowed rows.

    ``core_states``/``core_rows`` is a sub-component meeting Rabin pair
    ``pair``; it equals the whole component unless accepting MECs of
    different pairs overlapped and were merged.
    """

    states: np.ndarray
    rows: np.ndarray
    pair: int
    core_states: np.ndarray = None
    core_rows: np.ndarray = None

    def __post_init__(self):
        if self.core_states is None:
            object.__setattr__(self, "core_states", self.states)
            object.__setattr__(self, "core_rows", self.rows)


@dataclass(frozen=True, eq=False)
class Amec:
    components: tuple
    union: np.ndarray

    @property
    def empty(self) -> bool:
        return not self.components

    def component_of(self) -> np.ndarray:
        out = np.full(self.union.shape[0], -1, dtype=np.int64)
        for c, comp in enumerate(self.components):
            out[comp.states] = c
        return out


def maximal_end_components(p: SparseMdp, allowed: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """MECs of the sub-MDP induced by the ``allowed`` state mask.

    Iterative pruning: drop rows that can leave the candidate SCC, drop
    states without rows, recompute SCCs, until stable.
    """
    rs = p.row_state
    coo = p.trans.tocoo()
    state_ok = allowed.copy()
    row_ok = state_ok[rs].copy()
    while True:
        leaves = np.zeros(p.n_rows, dtype=bool)
        np.logical_or.at(leaves, coo.row, ~state_ok[coo.col])
        row_ok &= ~leaves
        has = np.zeros(p.n_states, dtype=bool)
        has[rs[row_ok]] = True
        state_ok &= has
        row_ok &= state_ok[rs]
        idx = np.flatnonzero(state_ok)
        sub = _row_graph(p, row_ok)[idx][:, idx]
        _, lab = connected_components(sub, directed=True, connection="strong")
        scc = np.full(p.n_states, -1, dtype=np.int64)
        scc[idx] = lab
        cross = np.zeros(p.n_rows, dtype=bool)
        np.logical_or.at(cross, coo.row, scc[coo.col] != scc[rs[coo.row]])
        if not (row_ok & cross).any():
            break
        row_ok &= ~cross
    out = []
    for c in np.unique(scc[state_ok]):
        members = np.flatnonzero((scc == c) & state_ok)
        rows = np.flatnonzero(row_ok & np.isin(rs, members))
        out.append((members, rows))
    return out


def compute_amecs(p: ProductMdp, exclude: np.ndarray | None = None) -> Amec:
    """Accepting MECs over all pairs, made pairwise disjoint.

    Accepting MECs of different pairs that share a state are merged (the
    union of overlapping end components is again one).  The merged
    component keeps its lowest-pair MEC as the accepting core, so the union
    of all components equals the union of all accepting end components.
    """
    blocked = p.rejecting.copy() if p.rejecting is not None else np.zeros(p.n_states, dtype=bool)
    if exclude is not None:
        blocked |= exclude
    raw = []
    for i, (h, acc) in enumerate(zip(p.h_masks, p.i_masks)):
        for members, rows in maximal_end_components(p, ~h & ~blocked):
            if acc[members].any():
                raw.append((members, rows, i))
    # MECs of one pair are disjoint, so overlaps only join different pairs
    group = list(range(len(raw)))

    def find(a):
        while group[a] != a:
            group[a] = group[group[a]]
            a = group[a]
        return a

    owner = np.full(p.n_states, -1, dtype=np.int64)
    for k, (members, _, _) in enumerate(raw):
        for o in np.unique(owner[members]):
            if o >= 0:
                group[find(int(o))] = find(k)
        owner[members] = k
    merged: dict = {}
    for k in range(len(raw)):
        merged.setdefault(find(k), []).append(k)
    comps = []
    taken = np.zeros(p.n_states, dtype=bool)
    for ks in merged.values():
        ks.sort(key=lambda k: (raw[k][2], int(raw[k][0][0])))
        states = np.unique(np.concatenate([raw[k][0] for k in ks]))
        rows = np.unique(np.concatenate([raw[k][1] for k in ks]))
        core_s, core_r, pair = raw[ks[0]]
        comps.append(Component(states, rows, pair, core_s, core_r))
        taken[states] = True
    comps.sort(key=lambda c: int(c.states[0]))
    return Amec(tuple(comps), taken)


def check_component(p: SparseMdp, c: Component) -> list[str]:
    """Violations of closedness and strong connectivity for one component."""
    out = []
    inside = np.zeros(p.n_states, dtype=bool)
    inside[c.states] = True
    if not np.all(inside[p.row_state[c.rows]]):
        out.append("row outside component")
    for r in c.rows:
        ys, _ = p.successors(int(r))
        if not inside[ys].all():
            out.append(f"row {int(r)} leaves the component")
            break
    owners = set(p.row_state[c.rows].tolist())
    if owners != set(c.states.tolist()):
        out.append("state without actions")
    mask = np.zeros(p.n_rows, dtype=bool)
    mask[c.rows] = True
    g = _row_graph(p, mask)[c.states][:, c.states]
    n, _ = connected_components(g, directed=True, connection="strong")
    if n != 1:
        out.append("not strongly connected")
    return out
