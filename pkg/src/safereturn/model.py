"""Labeled MDPs, induced Markov chains and the shared linear-algebra kernels.

Transitions are stored row-wise: one row per allowed (state, action) pair,
rows grouped by state in ascending order.  ``state_ptr[x]:state_ptr[x+1]``
are the rows of state ``x`` and ``trans`` is a CSR matrix of shape
``(n_rows, n_states)``.  The same layout is reused by product MDPs so every
solver below works on either.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order
from scipy.sparse.linalg import spsolve

from .errors import NonAbsorbingSink, PolicyDomainMismatch

STOCH_TOL = 1e-9
SOLVE_TOL = 1e-10
MAX_VI_ITER = 200_000
MAX_PI_ITER = 200
COST_SWEEPS = 500


@dataclass(frozen=True, eq=False)
class SparseMdp:
    """Row-structured decision process shared by models and products."""

    n_states: int
    state_ptr: np.ndarray
    row_action: tuple
    row_cost: np.ndarray
    trans: sp.csr_matrix

    @property
    def n_rows(self) -> int:
        return len(self.row_action)

    @cached_property
    def row_state(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_states), np.diff(self.state_ptr))

    def rows(self, x: int) -> range:
        return range(int(self.state_ptr[x]), int(self.state_ptr[x + 1]))

    def actions(self, x: int) -> tuple:
        return tuple(self.row_action[r] for r in self.rows(x))

    def find_row(self, x: int, action) -> int:
        for r in self.rows(x):
            if self.row_action[r] == action:
                return r
        raise KeyError(f"action {action!r} not allowed at state {x}")

    def successors(self, r: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.trans.indptr[r], self.trans.indptr[r + 1]
        return self.trans.indices[lo:hi], self.trans.data[lo:hi]

    @cached_property
    def state_graph(self) -> sp.csr_matrix:
        """Boolean state adjacency over all allowed actions."""
        return _row_graph(self, np.ones(self.n_rows, dtype=bool))


def _row_graph(m: SparseMdp, row_mask: np.ndarray) -> sp.csr_matrix:
    sel = sp.diags(row_mask.astype(float))
    owner = sp.csr_matrix(
        (np.ones(m.n_rows), (m.row_state, np.arange(m.n_rows))),
        shape=(m.n_states, m.n_rows),
    )
    g = (owner @ sel @ (m.trans > 0).astype(float)).tocsr()
    g.data[:] = 1.0
    return g


@dataclass(frozen=True, eq=False)
class LabeledMdp(SparseMdp):
    """Finite labeled MDP with strictly positive action costs."""

    ap: tuple = ()
    labels: tuple = ()
    initial: int = 0
    coords: tuple | None = None

    @classmethod
    def from_transitions(
        cls,
        n_states: int,
        ap: Sequence[str],
        labels: Sequence[Iterable[str]],
        initial: int,
        transitions: Iterable[tuple],
        coords: Sequence[tuple[int, int]] | None = None,
    ) -> "LabeledMdp":
        """Build from ``(x, action, cost, [(y, p), ...])`` records.

        Duplicate targets in a record are summed.  Structural errors (state
        index out of range) raise ``ValueError``; semantic violations are left
        for :func:`validate_mdp`.
        """
        recs = list(transitions)
        for x, _, _, dist in recs:
            if not 0 <= x < n_states:
                raise ValueError(f"transition source {x} out of range")
            for y, _ in dist:
                if not 0 <= y < n_states:
                    raise ValueError(f"transition target {y} out of range")
        order = sorted(range(len(recs)), key=lambda i: (recs[i][0], i))
        recs = [recs[i] for i in order]
        counts = np.bincount([r[0] for r in recs], minlength=n_states) if recs else np.zeros(n_states, int)
        ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        rr, cc, vv = [], [], []
        for i, (_, _, _, dist) in enumerate(recs):
            for y, p in dist:
                rr.append(i)
                cc.append(int(y))
                vv.append(float(p))
        trans = sp.csr_matrix((vv, (rr, cc)), shape=(len(recs), n_states))
        trans.sum_duplicates()
        trans.sort_indices()
        return cls(
            n_states=int(n_states),
            state_ptr=ptr,
            row_action=tuple(r[1] for r in recs),
            row_cost=np.array([float(r[2]) for r in recs]),
            trans=trans,
            ap=tuple(ap),
            labels=tuple(frozenset(l) for l in labels),
            initial=int(initial),
            coords=None if coords is None else tuple(tuple(int(v) for v in c) for c in coords),
        )

    def records(self) -> list[tuple]:
        out = []
        for r in range(self.n_rows):
            ys, ps = self.successors(r)
            out.append((int(self.row_state[r]), self.row_action[r], float(self.row_cost[r]),
                        [(int(y), float(p)) for y, p in zip(ys, ps)]))
        return out

    def to_json(self) -> dict:
        idx = {a: i for i, a in enumerate(self.ap)}
        doc = {
            "states": self.n_states,
            "ap": list(self.ap),
            "labels": [sorted(idx[a] for a in l if a in idx) for l in self.labels],
            "initial": self.initial,
            "transitions": [
                {"from": x, "action": u, "cost": c, "dist": [[y, p] for y, p in d]}
                for x, u, c, d in self.records()
            ],
        }
        if self.coords is not None:
            doc["coords"] = [list(c) for c in self.coords]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "LabeledMdp":
        ap = doc["ap"]
        return cls.from_transitions(
            doc["states"],
            ap,
            [[ap[i] for i in l] for l in doc["labels"]],
            doc["initial"],
            [(t["from"], t["action"], t["cost"], [(y, p) for y, p in t["dist"]]) for t in doc["transitions"]],
            coords=doc.get("coords"),
        )


def save_mdp(m: LabeledMdp, path) -> None:
    with open(path, "w") as fh:
        json.dump(m.to_json(), fh, indent=1)
        fh.write("\n")


def load_mdp(path) -> LabeledMdp:
    with open(path) as fh:
        return LabeledMdp.from_json(json.load(fh))


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_mdp(m: LabeledMdp, tol: float = STOCH_TOL) -> ValidationReport:
    """List every violated well-formedness invariant of ``m``."""
    out = []
    if not 0 <= m.initial < m.n_states:
        out.append(f"initial state {m.initial} out of range")
    if len(m.labels) != m.n_states:
        out.append("label table length differs from state count")
    sums = np.asarray(m.trans.sum(axis=1)).ravel()
    for r in range(m.n_rows):
        x, u = int(m.row_state[r]), m.row_action[r]
        if abs(sums[r] - 1.0) > tol:
            out.append(f"row-stochasticity at ({x},{u}): sum {sums[r]!r}")
        if not m.row_cost[r] > 0:
            out.append(f"non-positive cost at ({x},{u})")
        ys, ps = m.successors(r)
        if np.any(ps < 0):
            out.append(f"negative probability at ({x},{u})")
    for x in np.flatnonzero(np.diff(m.state_ptr) == 0):
        out.append(f"dead state {int(x)} has no allowed action")
    apset = set(m.ap)
    for x, l in enumerate(m.labels):
        extra = set(l) - apset
        if extra:
            out.append(f"state {x} carries undeclared propositions {sorted(extra)}")
    return ValidationReport(tuple(out))


@dataclass(frozen=True)
class RunTrace:
    states: tuple
    labels: tuple
    actions: tuple
    cost_accum: tuple

    def __post_init__(self):
        if len(self.labels) != len(self.states):
            raise ValueError("labels and states differ in length")
        if len(self.actions) not in (len(self.states), len(self.states) - 1):
            raise ValueError("actions must be one shorter than states")


@dataclass(frozen=True, eq=False)
class MarkovChain:
    trans: sp.csr_matrix
    initial: np.ndarray

    @property
    def n_states(self) -> int:
        return self.trans.shape[0]


@dataclass(frozen=True, eq=False)
class ValueFunction:
    values: np.ndarray
    domain: str = ""

    def __getitem__(self, s):
        return self.values[s]

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class StationaryPolicy:
    """Per-row action probabilities for a :class:`SparseMdp`.

    ``probs[r]`` is the probability of the action of row ``r`` in the state
    owning that row.
    """

    probs: np.ndarray
    domain: str = ""

    @classmethod
    def deterministic(cls, m: SparseMdp, rows: Sequence[int], domain: str = "") -> "StationaryPolicy":
        p = np.zeros(m.n_rows)
        p[np.asarray(rows, dtype=np.int64)] = 1.0
        return cls(p, domain)

    @classmethod
    def from_mapping(cls, m: SparseMdp, rule: dict, domain: str = "") -> "StationaryPolicy":
        """``rule`` maps state -> {action: prob}; unlisted states get their first row."""
        p = np.zeros(m.n_rows)
        for x in range(m.n_states):
            dist = rule.get(x)
            if not dist:
                if m.state_ptr[x + 1] > m.state_ptr[x]:
                    p[m.state_ptr[x]] = 1.0
                continue
            for u, w in dist.items():
                try:
                    r = m.find_row(x, u)
                except KeyError:
                    raise PolicyDomainMismatch(f"action {u!r} not allowed at state {x}") from None
                p[r] = w
        return cls(p, domain)

    def action_dist(self, m: SparseMdp, x: int) -> dict:
        return {m.row_action[r]: float(self.probs[r]) for r in m.rows(x) if self.probs[r] > 0}


def check_policy(m: SparseMdp, pi: StationaryPolicy, tol: float = STOCH_TOL) -> None:
    if len(pi.probs) != m.n_rows:
        raise PolicyDomainMismatch(f"policy has {len(pi.probs)} rows, model has {m.n_rows}")
    if np.any(pi.probs < -tol):
        raise PolicyDomainMismatch("negative action probability")
    sums = np.add.reduceat(pi.probs, m.state_ptr[:-1]) if m.n_rows else np.zeros(0)
    empty = np.diff(m.state_ptr) == 0
    sums = np.where(empty, 1.0, sums)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise PolicyDomainMismatch(f"action distribution at state {int(bad[0])} sums to {sums[bad[0]]!r}")


def induce_chain(m: SparseMdp, pi: StationaryPolicy, initial: np.ndarray | None = None) -> MarkovChain:
    """Markov chain of ``m`` under ``pi``: P(x, y) = sum_u pi(x,u) p(x,u,y)."""
    check_policy(m, pi)
    w = sp.csr_matrix((pi.probs, (m.row_state, np.arange(m.n_rows))), shape=(m.n_states, m.n_rows))
    p = (w @ m.trans).tocsr()
    p.eliminate_zeros()
    if initial is None:
        initial = np.zeros(m.n_states)
        initial[getattr(m, "initial", 0)] = 1.0
    return MarkovChain(p, np.asarray(initial, dtype=float))


def backward_reachable(graph: sp.csr_matrix, targets: np.ndarray) -> np.ndarray:
    """Mask of states with a path into ``targets`` in the adjacency ``graph``."""
    n = graph.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[targets] = True
    if not mask.any():
        return mask
    # add a virtual root linking to every target on the reversed graph
    rev = graph.T.tocsr()
    root = sp.csr_matrix((np.ones(int(mask.sum())), (np.zeros(int(mask.sum()), dtype=int), np.flatnonzero(mask))),
                         shape=(1, n))
    big = sp.vstack([sp.hstack([rev, sp.csr_matrix((n, 1))]), sp.hstack([root, sp.csr_matrix((1, 1))])]).tocsr()
    order = breadth_first_order(big, n, directed=True, return_predecessors=False)
    mask[order[order < n]] = True
    return mask


def forward_reachable(graph: sp.csr_matrix, sources) -> np.ndarray:
    return backward_reachable(graph.T.tocsr(), np.atleast_1d(np.asarray(sources, dtype=np.int64)))


def expected_visits(chain_p: sp.csr_matrix, transient: np.ndarray, source: int) -> np.ndarray:
    """Expected visit counts to each transient state starting from ``source``.

    ``transient`` must contain no closed class; the result is zero outside it.
    """
    n = chain_p.shape[0]
    z = np.zeros(n)
    if not transient[source]:
        return z
    idx = np.flatnonzero(transient)
    pos = np.full(n, -1)
    pos[idx] = np.arange(idx.size)
    q = chain_p[idx][:, idx]
    a = (sp.identity(idx.size, format="csc") - q.T).tocsc()
    e = np.zeros(idx.size)
    e[pos[source]] = 1.0
    z[idx] = np.atleast_1d(spsolve(a, e))
    return z


def absorbing_distribution(c: MarkovChain, sinks, source: int, tol: float = 1e-12) -> dict:
    """Absorption probabilities into each sink from ``source``.

    Key ``None`` carries the mass that never reaches a sink, computed as one
    minus the total sink mass.
    """
    sinks = sorted({int(s) for s in sinks})
    if not sinks:
        raise ValueError("sink set is empty")
    p = c.trans
    for s in sinks:
        ys, ps = p.indices[p.indptr[s]:p.indptr[s + 1]], p.data[p.indptr[s]:p.indptr[s + 1]]
        leak = float(ps[ys != s].sum())
        if leak > tol:
            raise NonAbsorbingSink(f"sink {s} leaks mass {leak!r}")
    if source in sinks:
        out = {s: 0.0 for s in sinks}
        out[source] = 1.0
        out[None] = 0.0
        return out
    sink_mask = np.zeros(c.n_states, dtype=bool)
    sink_mask[sinks] = True
    transient = backward_reachable(_chain_graph(p), np.flatnonzero(sink_mask)) & ~sink_mask
    z = expected_visits(p, transient, source)
    mass = np.asarray(p[:, sinks].T @ z).ravel()
    mass = np.clip(mass, 0.0, 1.0)
    out = {s: float(v) for s, v in zip(sinks, mass)}
    out[None] = max(0.0, 1.0 - float(mass.sum()))
    return out


def _chain_graph(p: sp.csr_matrix) -> sp.csr_matrix:
    g = p.copy()
    g.data = (g.data > 0).astype(float)
    g.eliminate_zeros()
    return g


def max_by_state(q: np.ndarray, m: SparseMdp, row_mask: np.ndarray | None = None, fill: float = 0.0) -> np.ndarray:
    """Per-state maximum of row values; states without eligible rows get ``fill``."""
    q = np.array(q, dtype=float, copy=True)
    if row_mask is not None:
        q[~row_mask] = -np.inf
    out = np.full((m.n_states,) + q.shape[1:], -np.inf)
    has = np.diff(m.state_ptr) > 0
    if m.n_rows:
        out[has] = np.maximum.reduceat(q, m.state_ptr[:-1][has], axis=0)
    out[~np.isfinite(out)] = fill
    return out


def reach_values(
    m: SparseMdp,
    target: np.ndarray,
    row_mask: np.ndarray | None = None,
    tol: float = SOLVE_TOL,
    init: np.ndarray | None = None,
    reward: np.ndarray | None = None,
) -> np.ndarray:
    """Max-reachability values by value iteration from below.

    ``target`` is a boolean mask of absorbing states worth ``reward``
    (default 1); ``row_mask`` restricts the usable rows.
    """
    if row_mask is None:
        row_mask = np.ones(m.n_rows, dtype=bool)
    term = np.where(target, 1.0 if reward is None else reward, 0.0)
    g = _row_graph(m, row_mask)
    live = backward_reachable(g, np.flatnonzero(term > 0))
    v = term.copy() if init is None else np.where(target, term, np.maximum(init, 0.0))
    v[~live] = 0.0
    free = live & ~target
    for _ in range(MAX_VI_ITER):
        best = max_by_state(m.trans @ v, m, row_mask)
        new = np.where(free, best, v)
        if np.max(np.abs(new - v), initial=0.0) < tol:
            v = new
            break
        v = new
    return v


def progress_policy(
    m: SparseMdp,
    v: np.ndarray,
    target: np.ndarray,
    row_mask: np.ndarray | None = None,
    tol: float = 1e-9,
) -> np.ndarray:
    """Deterministic row choice per state attaining ``v`` while making progress.

    Among near-optimal rows, each state picks the lowest-index row that has a
    successor strictly closer (in the optimal-row graph) to ``target``.  This
    avoids the stalling self-loops a plain argmax can select.  States that
    cannot progress get their best row, or first eligible row.
    """
    if row_mask is None:
        row_mask = np.ones(m.n_rows, dtype=bool)
    q = m.trans @ v
    opt = row_mask & (q >= v[m.row_state] - tol) & (v[m.row_state] > 0)
    choice = np.full(m.n_states, -1, dtype=np.int64)
    ranked = target.copy()
    pos_trans = m.trans.copy()
    pos_trans.data = (pos_trans.data > 0).astype(float)
    while True:
        hit = (pos_trans @ ranked.astype(float)) > 0
        cand = opt & hit & ~ranked[m.row_state]
        if not cand.any():
            break
        rows = np.flatnonzero(cand)
        states = m.row_state[rows]
        first = np.unique(states, return_index=True)[1]
        choice[states[first]] = rows[first]
        ranked[states[first]] = True
    # fallbacks: best eligible row, cheapest among ties, else the first row
    qm = np.where(row_mask, q, -np.inf)
    best = max_by_state(qm, m, row_mask, fill=-np.inf)
    rs = m.row_state
    cand = np.flatnonzero(row_mask & (choice[rs] < 0) & (qm >= best[rs] - 1e-12))
    order = np.lexsort((cand, m.row_cost[cand], rs[cand]))
    states, first = np.unique(rs[cand[order]], return_index=True)
    choice[states] = cand[order][first]
    rest = np.flatnonzero((choice < 0) & (np.diff(m.state_ptr) > 0))
    choice[rest] = m.state_ptr[rest]
    return choice


def evaluate_reach(m: SparseMdp, probs: np.ndarray, target: np.ndarray, reward: np.ndarray | None = None) -> np.ndarray:
    """Exact reach probability (or terminal reward) under row probabilities ``probs``."""
    w = sp.csr_matrix((probs, (m.row_state, np.arange(m.n_rows))), shape=(m.n_states, m.n_rows))
    p = (w @ m.trans).tocsr()
    return chain_reach(p, target, reward)


def chain_reach(p: sp.csr_matrix, target: np.ndarray, reward: np.ndarray | None = None) -> np.ndarray:
    """Absorption value of ``target`` (worth ``reward``, default 1) in chain ``p``."""
    term = np.where(target, 1.0 if reward is None else reward, 0.0)
    live = backward_reachable(_chain_graph(p), np.flatnonzero(term > 0))
    free = live & ~target
    v = term.copy()
    idx = np.flatnonzero(free)
    if idx.size:
        a = (sp.identity(idx.size, format="csc") - p[idx][:, idx]).tocsc()
        b = p[idx] @ term
        v[idx] = np.atleast_1d(spsolve(a, b))
    return np.clip(v, 0.0, None)


def _usable(m: SparseMdp, choice: np.ndarray, row_mask: np.ndarray) -> np.ndarray:
    # states left with only a masked fallback row are stuck and score zero
    rows = choice[choice >= 0]
    probs = np.zeros(m.n_rows)
    probs[rows[row_mask[rows]]] = 1.0
    return probs


def solve_reach(
    m: SparseMdp,
    target: np.ndarray,
    row_mask: np.ndarray | None = None,
    tol: float = SOLVE_TOL,
    reward: np.ndarray | None = None,
    min_cost: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal reach values and a deterministic optimal row per state.

    With ``min_cost`` ties among reach-optimal rows are broken by minimal
    expected cost until absorption (see :func:`refine_cost`).

    A coarse value iteration seeds a progress-based policy, which policy
    iteration then improves (switching only on strict gains).  The result is
    certified: the exact value of the returned policy is a Bellman fixpoint
    within ``tol``, and being attained it is the least one.
    """
    if row_mask is None:
        row_mask = np.ones(m.n_rows, dtype=bool)
    # seed: any row that makes graph progress towards a rewarding target
    term = np.where(target, 1.0 if reward is None else reward, 0.0)
    live = backward_reachable(_row_graph(m, row_mask), np.flatnonzero(term > 0))
    choice = progress_policy(m, live.astype(float), target & (term > 0), row_mask, tol=1.0)
    v_old = None
    for _ in range(MAX_PI_ITER):
        probs = _usable(m, choice, row_mask)
        v_pi = evaluate_reach(m, probs, target, reward)
        if v_old is not None and np.any(v_pi < v_old - tol):
            break
        q = np.where(row_mask, m.trans @ v_pi, -np.inf)
        best = max_by_state(q, m, row_mask)
        gap = np.where(target, 0.0, best - v_pi)
        if np.max(gap, initial=0.0) <= tol:
            if min_cost:
                choice = refine_cost(m, v_pi, target, choice, row_mask)
            return v_pi, choice
        at_best = np.flatnonzero((q >= best[m.row_state] - 1e-15) & (gap[m.row_state] > tol))
        states, first = np.unique(m.row_state[at_best], return_index=True)
        choice[states] = at_best[first]
        v_old = v_pi
    # safeguard: fine value iteration and progress extraction
    v = reach_values(m, target, row_mask, tol * 1e-2, reward=reward)
    choice = progress_policy(m, v, target, row_mask)
    probs = _usable(m, choice, row_mask)
    v = evaluate_reach(m, probs, target, reward)
    if min_cost:
        choice = refine_cost(m, v, target, choice, row_mask)
    return v, choice


def refine_cost(m: SparseMdp, v: np.ndarray, target: np.ndarray, choice: np.ndarray,
                row_mask: np.ndarray | None = None, tol: float = 1e-9) -> np.ndarray:
    """Cheapest policy among the rows that keep the reach value ``v``.

    Minimizes expected cost until absorption in ``target`` or in the
    zero-value states, by policy iteration from ``choice`` (which must be
    reach-optimal, hence absorbing with probability one).
    """
    if row_mask is None:
        row_mask = np.ones(m.n_rows, dtype=bool)
    rs = m.row_state
    opt = row_mask & (m.trans @ v >= v[rs] - tol)
    free = ~target & (v > 0)
    idx = np.flatnonzero(free)
    if not idx.size:
        return choice
    choice = choice.copy()
    prev, j_old = choice, None
    for _ in range(MAX_PI_ITER):
        rows = choice[idx]
        if np.any(rows < 0):
            return choice
        a = (sp.identity(idx.size, format="csc") - m.trans[rows][:, idx]).tocsc()
        j = np.zeros(m.n_states)
        j[idx] = np.atleast_1d(spsolve(a, m.row_cost[rows]))
        if not np.all(np.isfinite(j)) or (j_old is not None and np.any(j > j_old + 1e-6 * (1 + np.abs(j_old)))):
            return prev
        if j_old is None:
            # sweeps from above keep T j <= j, so greedy policies stay proper
            for _ in range(COST_SWEEPS):
                qc = np.where(opt, m.row_cost + m.trans @ j, np.inf)
                nxt = np.where(free, np.minimum(j, -max_by_state(-qc, m, opt, fill=-np.inf)), 0.0)
                done = np.max(j - nxt, initial=0.0) <= 1e-10 * (1 + np.max(j))
                j = nxt
                if done:
                    break
        qc = np.where(opt, m.row_cost + m.trans @ j, np.inf)
        best = -max_by_state(-qc, m, opt, fill=-np.inf)
        ref = np.where(free, qc[np.maximum(choice, 0)] if j_old is None else j, 0.0)
        with np.errstate(invalid="ignore"):
            better = free & ((best < ref - 1e-9 * (1 + np.abs(ref))) | np.isinf(ref))
        if not better.any():
            return choice
        cand = np.flatnonzero(opt & better[rs] & (qc <= best[rs] + 1e-15))
        states, first = np.unique(rs[cand], return_index=True)
        prev = choice.copy()
        choice[states] = cand[first]
        j_old = j
    return choice


def reachability_value_iteration(m: SparseMdp, target, tol: float = SOLVE_TOL) -> ValueFunction:
    mask = _as_mask(target, m.n_states)
    return ValueFunction(np.clip(reach_values(m, mask, tol=tol), 0.0, 1.0))


def _as_mask(states, n: int) -> np.ndarray:
    arr = np.asarray(states)
    if arr.dtype == bool and arr.shape == (n,):
        return arr.copy()
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(list(states), dtype=np.int64)] = True
    return mask
