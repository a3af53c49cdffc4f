"""Reachability, occupancy-measure LPs and average-cost suffix synthesis."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import EmptyAmec, EmptyTarget, Infeasible, SolverCheckFailed
from .model import (SparseMdp, StationaryPolicy, ValueFunction, _as_mask,
                    backward_reachable, check_policy, evaluate_reach,
                    solve_reach)
from .product import Amec

LP_TOL = 1e-7
CHECK_TOL = 1e-6


class SafetyMode(str, enum.Enum):
    CUMULATIVE = "cumulative"
    STATEWISE = "statewise"


# ---------------------------------------------------------------- reachability


def solve_max_reachability(p: SparseMdp, target, row_mask=None, domain: str = "") -> tuple[StationaryPolicy, ValueFunction]:
    """Optimal reach policy and values; ``target`` states are absorbing."""
    mask = _as_mask(target, p.n_states)
    if not mask.any():
        raise EmptyTarget("target set is empty")
    v, choice = solve_reach(p, mask, row_mask, min_cost=True)
    for x in np.flatnonzero(choice < 0):
        choice[x] = p.state_ptr[x]
    pi = StationaryPolicy.deterministic(p, choice[np.diff(p.state_ptr) > 0], domain)
    return pi, ValueFunction(np.clip(v, 0.0, 1.0), domain)


def evaluate_policy_reach(p: SparseMdp, pi: StationaryPolicy, target) -> ValueFunction:
    check_policy(p, pi)
    return ValueFunction(evaluate_reach(p, pi.probs, _as_mask(target, p.n_states)), pi.domain)


# ---------------------------------------------------------------- LP container


@dataclass(eq=False)
class LpProblem:
    """``min c.y`` s.t. ``a_eq y = b_eq``, ``a_ub y <= b_ub``, ``y >= 0``.

    ``var_rows`` maps each variable to the MDP row it measures.
    """

    c: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    a_ub: sp.csr_matrix
    b_ub: np.ndarray
    var_rows: np.ndarray
    ub_names: list = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return self.c.size

    def solve(self):
        if self.n_vars == 0:
            return None
        kw = {}
        if self.a_ub.shape[0]:
            kw.update(A_ub=self.a_ub, b_ub=self.b_ub)
        if self.a_eq.shape[0]:
            kw.update(A_eq=self.a_eq, b_eq=self.b_eq)
        res = linprog(self.c, bounds=(0, None), method="highs", **kw)
        if res.status != 0:
            return None
        return np.maximum(res.x, 0.0)

    def add_ub(self, coef: np.ndarray, rhs: float, name: str) -> "LpProblem":
        return LpProblem(self.c, self.a_eq, self.b_eq,
                         sp.vstack([self.a_ub, sp.csr_matrix(coef.reshape(1, -1))]).tocsr(),
                         np.append(self.b_ub, rhs), self.var_rows, self.ub_names + [name])

    def with_objective(self, c: np.ndarray) -> "LpProblem":
        return LpProblem(np.asarray(c, float), self.a_eq, self.b_eq, self.a_ub, self.b_ub,
                         self.var_rows, list(self.ub_names))

    def to_mps(self, name: str = "PREFIX") -> str:
        """Fixed-column MPS text."""
        out = [f"NAME          {name}", "ROWS", " N  COST"]
        eq = [f"E{i}" for i in range(self.a_eq.shape[0])]
        ub = [f"L{i}" for i in range(self.a_ub.shape[0])]
        out += [f" E  {n}" for n in eq] + [f" L  {n}" for n in ub]
        out.append("COLUMNS")
        a_eq, a_ub = self.a_eq.tocsc(), self.a_ub.tocsc()
        for j in range(self.n_vars):
            col = f"Y{j}"
            entries = []
            if self.c[j] != 0:
                entries.append(("COST", self.c[j]))
            for k in range(a_eq.indptr[j], a_eq.indptr[j + 1]):
                entries.append((eq[a_eq.indices[k]], a_eq.data[k]))
            for k in range(a_ub.indptr[j], a_ub.indptr[j + 1]):
                entries.append((ub[a_ub.indices[k]], a_ub.data[k]))
            for rn, v in entries:
                out.append(f"    {col:<8}  {rn:<8}  {v:>12.6g}")
        out.append("RHS")
        for rn, v in list(zip(eq, self.b_eq)) + list(zip(ub, self.b_ub)):
            if v != 0:
                out.append(f"    {'RHS':<8}  {rn:<8}  {v:>12.6g}")
        out.append("ENDATA")
        return "\n".join(out) + "\n"


def occupancy_lp(p: SparseMdp, source: int, transient: np.ndarray, row_ok: np.ndarray) -> LpProblem:
    """Flow-balance skeleton over rows of ``transient`` states.

    For every transient s: sum_u y(s,u) - sum p(s',u',s) y(s',u') = [s == source].
    """
    var_rows = np.flatnonzero(row_ok & transient[p.row_state])
    tidx = np.flatnonzero(transient)
    pos = np.full(p.n_states, -1, dtype=np.int64)
    pos[tidx] = np.arange(tidx.size)
    owner = sp.csr_matrix((np.ones(var_rows.size), (pos[p.row_state[var_rows]], np.arange(var_rows.size))),
                          shape=(tidx.size, var_rows.size))
    inflow = p.trans[var_rows][:, tidx].T.tocsr()
    a_eq = (owner - inflow).tocsr()
    b_eq = np.zeros(tidx.size)
    b_eq[pos[source]] = 1.0
    return LpProblem(np.zeros(var_rows.size), a_eq, b_eq, sp.csr_matrix((0, var_rows.size)),
                     np.zeros(0), var_rows)


def inflow_coef(p: SparseMdp, var_rows: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.asarray(p.trans[var_rows][:, np.flatnonzero(mask)].sum(axis=1)).ravel()


def max_reach_lp(p: SparseMdp, target, source: int | None = None) -> float:
    """Max reach probability from ``source`` by the occupancy LP (cross-check)."""
    mask = _as_mask(target, p.n_states)
    source = getattr(p, "initial", 0) if source is None else source
    if mask[source]:
        return 1.0
    live = backward_reachable(p.state_graph, np.flatnonzero(mask)) & ~mask
    if not live[source]:
        return 0.0
    lp = occupancy_lp(p, source, live, np.ones(p.n_rows, dtype=bool))
    lp = lp.with_objective(-inflow_coef(p, lp.var_rows, mask))
    y = lp.solve()
    if y is None:
        raise Infeasible("max-reach LP failed")
    return float(-lp.c @ y)


def policy_from_occupancy(p: SparseMdp, var_rows: np.ndarray, y: np.ndarray, fallback: np.ndarray,
                          tol: float = 1e-12) -> np.ndarray:
    """Row probabilities y(s,u)/sum_u y(s,u); ``fallback[s]`` row elsewhere."""
    probs = np.zeros(p.n_rows)
    probs[var_rows] = y
    tot = np.zeros(p.n_states)
    np.add.at(tot, p.row_state, probs)
    ok = tot > tol
    probs = np.where(ok[p.row_state], probs / np.where(tot > 0, tot, 1.0)[p.row_state], 0.0)
    for s in np.flatnonzero(~ok):
        if p.state_ptr[s + 1] > p.state_ptr[s]:
            probs[fallback[s]] = 1.0
    return probs


# ---------------------------------------------------------------- prefix


@dataclass(eq=False)
class PrefixResult:
    policy: StationaryPolicy
    reach: float
    entry: dict
    occupancy: np.ndarray
    var_rows: np.ndarray
    cost: float
    cumulative_safety: float
    min_visited_return: float
    lp: LpProblem | None


def forbidden_states(v_ret: np.ndarray, chi_r: float, mode: SafetyMode) -> np.ndarray:
    if SafetyMode(mode) is SafetyMode.STATEWISE:
        return v_ret < chi_r - 1e-12
    return np.zeros(v_ret.size, dtype=bool)


def safe_rows(p: SparseMdp, forbidden: np.ndarray) -> np.ndarray:
    """Rows whose state and every successor avoid ``forbidden``."""
    coo = p.trans.tocoo()
    bad = np.zeros(p.n_rows, dtype=bool)
    np.logical_or.at(bad, coo.row, forbidden[coo.col])
    return ~bad & ~forbidden[p.row_state]


def viable_rows(p: SparseMdp, forbidden: np.ndarray, exempt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Grow ``forbidden`` by states outside ``exempt`` with no safe row left."""
    forbidden = forbidden.copy()
    has = np.zeros(p.n_states, dtype=bool)
    while True:
        row_ok = safe_rows(p, forbidden)
        has[:] = False
        has[p.row_state[row_ok]] = True
        stuck = ~forbidden & ~exempt & ~has
        if not stuck.any():
            return forbidden, row_ok
        forbidden |= stuck


def solve_constrained_prefix(p: SparseMdp, s_xi, v_ret, chi_o: float, chi_r: float,
                             mode: SafetyMode = SafetyMode.CUMULATIVE, entry_cost=None,
                             domain: str = "prefix") -> PrefixResult:
    """Occupancy LP for the outbound prefix.

    Variables live on transient states: positive max-reach value towards
    ``s_xi`` and not in it.  Statewise mode also drops every row that can
    occupy a state with ``v_ret < chi_r`` or a state left without such
    rows.  With ``entry_cost`` (a per-state suffix gain on ``s_xi``) the
    objective is lexicographic: first the expected gain with unreached mass
    charged at the worst gain, then the prefix cost.  Raises
    :class:`Infeasible` with ``bound`` set to ``"chi_o"`` or ``"chi_r"``.
    """
    if not 0 <= chi_o <= 1 or not 0 <= chi_r <= 1:
        raise ValueError("bounds must lie in [0, 1]")
    s_xi = _as_mask(s_xi, p.n_states)
    v_ret = np.asarray(v_ret, dtype=float)
    mode = SafetyMode(mode)
    s0 = p.initial
    forb, row_ok = viable_rows(p, forbidden_states(v_ret, chi_r, mode), s_xi)
    target = s_xi & ~forb

    if forb[s0]:
        raise _infeasible("chi_r", f"initial state cannot keep the return value above chi_r (v = {v_ret[s0]:.4g})")
    if target[s0]:
        pi = StationaryPolicy.deterministic(p, p.state_ptr[:-1][np.diff(p.state_ptr) > 0], domain)
        return PrefixResult(pi, 1.0, {s0: 1.0}, np.zeros(0), np.zeros(0, int), 0.0,
                            float(v_ret[s0]), float(v_ret[s0]), None)

    v, choice = solve_reach(p, target, row_ok, min_cost=True)
    for s in np.flatnonzero(choice < 0):
        choice[s] = p.state_ptr[s]
    if v[s0] < chi_o - CHECK_TOL:
        v_free, _ = solve_reach(p, s_xi)
        bound = "chi_r" if v_free[s0] >= chi_o - CHECK_TOL else "chi_o"
        raise _infeasible(bound, f"max reach {v[s0]:.4g} below chi_o {chi_o}")
    transient = (v > 0) & ~target
    if not transient[s0]:
        if chi_o > 0:
            raise _infeasible("chi_o", "task set unreachable")
        pi = StationaryPolicy.deterministic(p, choice[np.diff(p.state_ptr) > 0], domain)
        return PrefixResult(pi, 0.0, {}, np.zeros(0), np.zeros(0, int), 0.0,
                            float(v_ret[s0]), float(v_ret[s0]), None)

    lp = occupancy_lp(p, s0, transient, row_ok)
    reach_c = inflow_coef(p, lp.var_rows, target)
    lp = lp.add_ub(-reach_c, -chi_o, "reach")
    safety_c = v_ret[p.row_state[lp.var_rows]]
    if mode is SafetyMode.CUMULATIVE:
        lp = lp.add_ub(-safety_c, -chi_r, "safety")
    cost_c = p.row_cost[lp.var_rows]

    if entry_cost is not None:
        g = np.asarray(entry_cost, dtype=float)
        g_max = float(g[target].max()) if target.any() else 0.0
        tidx = np.flatnonzero(target)
        gain_c = np.asarray(p.trans[lp.var_rows][:, tidx] @ (g[tidx] - g_max)).ravel()
        y = lp.with_objective(gain_c).solve()
        if y is None:
            raise _infeasible(_which_bound(p, s_xi, chi_o), "prefix LP infeasible")
        best = float(gain_c @ y)
        lp = lp.add_ub(gain_c, best + LP_TOL * (1 + abs(best)), "gain")
    lp = lp.with_objective(cost_c)
    y = lp.solve()
    if y is None:
        raise _infeasible(_which_bound(p, s_xi, chi_o), "prefix LP infeasible")

    probs = policy_from_occupancy(p, lp.var_rows, y, choice)
    pi = StationaryPolicy(probs, domain)
    v_pi = evaluate_reach(p, probs, target)
    reach_lp = float(reach_c @ y)
    if v_pi[s0] < min(chi_o, reach_lp) - CHECK_TOL:
        raise SolverCheckFailed(f"extracted prefix reaches {v_pi[s0]:.8f}, LP claims {reach_lp:.8f}")
    tidx = np.flatnonzero(target)
    flow_in = np.asarray(p.trans[lp.var_rows][:, tidx].T @ y).ravel()
    entry = {int(s): float(f) for s, f in zip(tidx, flow_in) if f > 1e-12}
    visited = p.row_state[lp.var_rows[y > 1e-12]]
    min_ret = float(v_ret[visited].min()) if visited.size else float(v_ret[s0])
    return PrefixResult(pi, float(v_pi[s0]), entry, y, lp.var_rows, float(cost_c @ y),
                        float(safety_c @ y), min_ret, lp)


def _which_bound(p, s_xi, chi_o) -> str:
    v_free, _ = solve_reach(p, s_xi)
    return "chi_r" if v_free[p.initial] >= chi_o - CHECK_TOL else "chi_o"


def _infeasible(bound: str, msg: str) -> Infeasible:
    err = Infeasible(f"{bound}: {msg}")
    err.bound = bound
    return err


# ---------------------------------------------------------------- suffix


@dataclass(eq=False)
class SuffixResult:
    policy: StationaryPolicy
    gains: np.ndarray
    lp_probs: np.ndarray
    state_gain: np.ndarray


def _component_gain(p: SparseMdp, states: np.ndarray, rows: np.ndarray, durations=None):
    """Minimal long-run average cost over the sub-MDP (states, rows).

    With per-row ``durations`` (semi-MDP macro actions) the flow is
    normalized by expected time instead of by decision count, so the gain
    is a cost per low-level step.
    """
    pos = np.full(p.n_states, -1, dtype=np.int64)
    pos[states] = np.arange(states.size)
    owner = sp.csr_matrix((np.ones(rows.size), (pos[p.row_state[rows]], np.arange(rows.size))),
                          shape=(states.size, rows.size))
    inflow = p.trans[rows][:, states].T.tocsr()
    tau = np.ones(rows.size) if durations is None else np.asarray(durations, dtype=float)[rows]
    a_eq = sp.vstack([owner - inflow, sp.csr_matrix(tau.reshape(1, -1))]).tocsr()
    b_eq = np.append(np.zeros(states.size), 1.0)
    res = linprog(p.row_cost[rows], A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise Infeasible("average-cost LP failed")
    return float(res.fun), np.maximum(res.x, 0.0)


def solve_suffix_average_cost(p: SparseMdp, amec: Amec, entry=None, epsilon: float = 0.05,
                              domain: str = "suffix", durations=None) -> SuffixResult:
    """Epsilon-blended minimal average-cost policy on every AMEC component.

    On the accepting core of a component the LP policy is mixed with the
    uniform choice over the core's rows with weight ``epsilon``; states the
    LP flow never visits first steer towards the flow's support.  States of
    a merged component outside its core steer towards the core.
    """
    if amec.empty:
        raise EmptyAmec("no accepting end component")
    if not 0 < epsilon <= 0.5:
        raise ValueError("epsilon must lie in (0, 0.5]")
    probs = np.zeros(p.n_rows)
    lp_probs = np.zeros(p.n_rows)
    gains = np.zeros(len(amec.components))
    state_gain = np.full(p.n_states, np.nan)
    for c, comp in enumerate(amec.components):
        core_s, core_r = comp.core_states, comp.core_rows
        g, y = _component_gain(p, core_s, core_r, durations)
        gains[c] = g
        state_gain[comp.states] = g
        row_mask = np.zeros(p.n_rows, dtype=bool)
        row_mask[core_r] = True
        support = np.zeros(p.n_states, dtype=bool)
        support[p.row_state[core_r[y > 1e-12]]] = True
        _, to_support = solve_reach(p, support, row_mask, min_cost=True)
        lp_rows = policy_from_occupancy(p, core_r, y, to_support)
        uni = np.zeros(p.n_rows)
        uni[core_r] = 1.0
        cnt = np.zeros(p.n_states)
        np.add.at(cnt, p.row_state, uni)
        uni = uni / np.where(cnt > 0, cnt, 1.0)[p.row_state]
        in_core = np.zeros(p.n_states, dtype=bool)
        in_core[core_s] = True
        sel = in_core[p.row_state]
        probs[sel] = (1 - epsilon) * lp_rows[sel] + epsilon * uni[sel]
        lp_probs[sel] = lp_rows[sel]
        rest = np.setdiff1d(comp.states, core_s)
        if rest.size:
            comp_mask = np.zeros(p.n_rows, dtype=bool)
            comp_mask[comp.rows] = True
            _, to_core = solve_reach(p, in_core, comp_mask, min_cost=True)
            probs[to_core[rest]] = 1.0
            lp_probs[to_core[rest]] = 1.0
    return SuffixResult(StationaryPolicy(probs, domain), gains, lp_probs, state_gain)


# ---------------------------------------------------------------- co-optimization


@dataclass(eq=False)
class OutboundPlan:
    prefix: PrefixResult
    suffix: SuffixResult
    plan_cost: float
    policy: StationaryPolicy


def co_optimize_prefix_suffix(p: SparseMdp, amec: Amec, chi_o: float, chi_r: float, v_ret,
                              mode: SafetyMode = SafetyMode.CUMULATIVE, epsilon: float = 0.05,
                              domain: str = "outbound", durations=None) -> OutboundPlan:
    """Suffix gains first, then the prefix LP weighted by the entry gains.

    ``plan_cost`` is the entry-weighted suffix gain conditioned on entering
    the accepting set.  The returned ``policy`` follows the prefix outside
    the AMEC union and the suffix inside it.
    """
    suffix = solve_suffix_average_cost(p, amec, epsilon=epsilon, durations=durations)
    s_xi = amec.union
    gain = np.where(s_xi, np.nan_to_num(suffix.state_gain), 0.0)
    prefix = solve_constrained_prefix(p, s_xi, v_ret, chi_o, chi_r, mode, entry_cost=gain)
    tot = sum(prefix.entry.values())
    plan_cost = sum(f * gain[s] for s, f in prefix.entry.items()) / tot if tot > 0 else float("nan")
    probs = np.where(s_xi[p.row_state], suffix.policy.probs, prefix.policy.probs)
    return OutboundPlan(prefix, suffix, float(plan_cost), StationaryPolicy(probs, domain))
