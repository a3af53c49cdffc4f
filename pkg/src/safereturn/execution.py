"""Monte-Carlo execution of outbound plans with external return requests.

Each run follows the outbound policy until a return request arrives, then
the return policy takes over from the current low-level state with the
return automaton reset to its initial state.  Runs draw from independent
streams ``SeedSequence([seed, run])`` so results do not depend on run order.
"""

from __future__ import annotations

import csv
import io
import json
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import PlanModelMismatch
from .model import LabeledMdp, RunTrace, SparseMdp
from .planner import BaselinePlan, HierarchicalPlan, model_digest

ZERO_TOL = 1e-12


# ---------------------------------------------------------------- request laws


@dataclass(frozen=True)
class Geometric:
    rate: float = 0.01

    def __post_init__(self):
        if not 0 < self.rate <= 1:
            raise ValueError("geometric rate must lie in (0, 1]")

    def sample(self, rng) -> int:
        return int(rng.geometric(self.rate)) - 1

    def __str__(self):
        return f"geometric:{self.rate}"


@dataclass(frozen=True)
class FixedTime:
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("request time must be nonnegative")

    def sample(self, rng) -> int:
        return self.t

    def __str__(self):
        return f"fixed:{self.t}"


@dataclass(frozen=True)
class UniformOver:
    a: int
    b: int

    def __post_init__(self):
        if not 0 <= self.a <= self.b:
            raise ValueError("need 0 <= a <= b")

    def sample(self, rng) -> int:
        return int(rng.integers(self.a, self.b + 1))

    def __str__(self):
        return f"uniform:{self.a},{self.b}"


def parse_request(text: str | None):
    """``geometric:RATE``, ``fixed:T``, ``uniform:A,B`` or ``none``."""
    if text is None or text.strip().lower() in ("", "none"):
        return None
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "geometric":
            return Geometric(float(arg) if arg else 0.01)
        if kind == "fixed":
            return FixedTime(int(arg))
        if kind == "uniform":
            a, b = arg.split(",")
            return UniformOver(int(a), int(b))
    except ValueError as exc:
        raise ValueError(f"bad request law {text!r}: {exc}") from None
    raise ValueError(f"unknown request law {text!r}")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``early_stop`` ends a run once nothing observable can change: the
    accepting set was entered and no return request is pending.  Costs of
    such runs are then not horizon-long, so leave it off for cost studies.
    """

    rng_seed: int = 0
    horizon: int = 10_000
    request_law: object = None
    num_runs: int = 100
    record_traces: bool = False
    suffix_window: float = 0.5
    early_stop: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.num_runs < 1:
            raise ValueError("num_runs must be >= 1")
        if not 0 < self.suffix_window <= 1:
            raise ValueError("suffix_window must lie in (0, 1]")


# ---------------------------------------------------------------- results


@dataclass(eq=False)
class RunResult:
    run: int
    sat: bool
    sat_time: int | None
    request_time: int | None
    returned: bool | None
    trapped: bool
    total_cost: float
    prefix_cost: float | None
    suffix_cost: float
    steps: int
    trace: list | None = None


@dataclass(eq=False)
class SimulationReport:
    num_runs: int
    sat_rate: float
    safe_rate: float | None
    n_requested: int
    trapped_rate: float
    mean_cost: float
    std_cost: float
    mean_suffix_cost: float
    std_suffix_cost: float
    mean_prefix_cost: float | None
    outbound_visits: np.ndarray
    runs: list = field(default_factory=list)

    def sigma(self, which: str = "sat") -> float:
        """Binomial standard error of ``sat_rate`` or ``safe_rate``."""
        if which == "sat":
            p, n = self.sat_rate, self.num_runs
        else:
            p, n = self.safe_rate, self.n_requested
        return float(np.sqrt(p * (1 - p) / n)) if n else float("nan")

    def summary(self) -> dict:
        return {
            "num_runs": self.num_runs, "sat_rate": self.sat_rate,
            "safe_rate": "n/a" if self.safe_rate is None else self.safe_rate,
            "n_requested": self.n_requested, "trapped_rate": self.trapped_rate,
            "mean_cost": self.mean_cost, "std_cost": self.std_cost,
            "mean_suffix_cost": self.mean_suffix_cost, "std_suffix_cost": self.std_suffix_cost,
            "mean_prefix_cost": "n/a" if self.mean_prefix_cost is None else self.mean_prefix_cost,
        }

    def to_json(self) -> str:
        doc = self.summary()
        doc["runs"] = [{"run": r.run, "sat": r.sat, "sat_time": r.sat_time, "request_time": r.request_time,
                        "returned": r.returned, "trapped": r.trapped, "total_cost": r.total_cost,
                        "steps": r.steps} for r in self.runs]
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        s = self.summary()
        w.writerow(list(s))
        w.writerow([repr(v) if isinstance(v, float) else v for v in s.values()])
        return buf.getvalue()

    def traces_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "t", "x", "q", "action", "label", "cost", "mode"])
        for r in self.runs:
            for row in r.trace or ():
                w.writerow([r.run, *row])
        return buf.getvalue()


# ---------------------------------------------------------------- samplers


class _Stream:
    """Uniform draws in chunks from one generator."""

    def __init__(self, rng, chunk: int = 256):
        self.rng, self.chunk = rng, chunk
        self.buf, self.i = rng.random(chunk), 0

    def u(self) -> float:
        if self.i == self.chunk:
            self.buf, self.i = self.rng.random(self.chunk), 0
        v = self.buf[self.i]
        self.i += 1
        return v


class _Succ:
    """Successor sampling for the rows of a sparse model."""

    def __init__(self, m: SparseMdp):
        t = m.trans.tocsr()
        self.ptr = t.indptr.tolist()
        self.idx = t.indices.tolist()
        cum = np.cumsum(t.data)
        starts = np.repeat(np.r_[0.0, cum][t.indptr[:-1]], np.diff(t.indptr))
        self.cum = (cum - starts).tolist()

    def draw(self, r: int, u: float) -> int:
        lo, hi = self.ptr[r], self.ptr[r + 1]
        for k in range(lo, hi - 1):
            if u < self.cum[k]:
                return self.idx[k]
        return self.idx[hi - 1]


class _Choice:
    """Row sampling for a stationary policy given as row probabilities."""

    def __init__(self, m: SparseMdp, probs: np.ndarray):
        self.m, self.probs, self.cache = m, probs, {}

    def draw(self, s: int, u: float) -> int:
        c = self.cache.get(s)
        if c is None:
            lo, hi = int(self.m.state_ptr[s]), int(self.m.state_ptr[s + 1])
            p = self.probs[lo:hi]
            tot = p.sum()
            if tot <= 0:
                c = ([lo], [1.0])
            else:
                nz = np.flatnonzero(p > 0)
                c = ((lo + nz).tolist(), (np.cumsum(p[nz]) / tot).tolist())
            self.cache[s] = c
        rows, cum = c
        for r, cp in zip(rows, cum):
            if u < cp:
                return r
        return rows[-1]


def _label(m: LabeledMdp, x: int) -> str:
    return "|".join(sorted(m.labels[x]))


# ---------------------------------------------------------------- executors


class _Runner:
    """Shared per-run bookkeeping; subclasses provide outbound and return steps."""

    def __init__(self, m: LabeledMdp, plan, cfg: SimConfig):
        if plan.model is not m and model_digest(plan.model) != model_digest(m):
            raise PlanModelMismatch("plan was synthesized for a different model")
        self.m, self.plan, self.cfg = m, plan, cfg
        self.succ_m = _Succ(m)
        self.c_max = float(m.row_cost.max())
        p_r = plan.ret.product
        self.ret_choice = _Choice(p_r, plan.ret.policy.probs)
        self.ret_union = plan.ret.amec.union
        self.ret_vals = plan.ret.values
        self.succ_r = _Succ(p_r)
        self.out_union = plan.task_amec.union
        self.visits = np.zeros(m.n_states, dtype=np.int64)

    def run(self, k: int) -> RunResult:
        cfg = self.cfg
        rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, k]))
        law = cfg.request_law
        t_req = law.sample(rng) if law is not None else None
        if t_req is not None and t_req >= cfg.horizon:
            t_req = None
        self.st = _Stream(rng)
        self.trace = [] if cfg.record_traces else None
        self.costs = []
        self.seen = set()
        self.sat_time = None
        self.trapped = False
        self.t = 0
        self.start_outbound()
        returned = None
        while self.t < cfg.horizon:
            if self.sat_time is None and self.in_accepting():
                self.sat_time = self.t
            if t_req is not None and self.t == t_req:
                returned = self.do_return()
                break
            if self.outbound_trapped():
                self.trapped = True
                break
            if cfg.early_stop and self.sat_time is not None and t_req is None:
                break
            self.outbound_step("prefix" if self.sat_time is None else "suffix")
        else:
            if self.sat_time is None and self.in_accepting():
                self.sat_time = self.t
        if t_req is not None and returned is None and self.t < cfg.horizon:
            # trapped before the request arrived
            returned = False
        for x in self.seen:
            self.visits[x] += 1
        costs = np.asarray(self.costs)
        if self.trapped:
            total = self.c_max * cfg.horizon
            suffix = self.c_max
        else:
            total = float(costs.sum())
            w = max(1, int(np.ceil(cfg.suffix_window * costs.size))) if costs.size else 0
            suffix = float(costs[-w:].mean()) if w else 0.0
        prefix = float(costs[:self.sat_time].sum()) if self.sat_time is not None else None
        return RunResult(k, self.sat_time is not None, self.sat_time, t_req, returned, self.trapped,
                         total, prefix, suffix, self.t, self.trace)

    def record(self, x, q, action, cost, mode):
        self.costs.append(cost)
        if mode != "return":
            self.seen.add(x)
        if self.trace is not None:
            self.trace.append((self.t, int(x), int(q), action, _label(self.m, x), repr(float(cost)), mode))
        self.t += 1

    def ret_walk(self, s_r: int) -> bool:
        """Follow the flat return policy on the return product from ``s_r``."""
        p_r = self.plan.ret.product
        while True:
            if self.ret_union[s_r]:
                return True
            if self.ret_vals[s_r] <= ZERO_TOL:
                self.trapped = True
                return False
            if self.t >= self.cfg.horizon:
                return False
            r = self.ret_choice.draw(s_r, self.st.u())
            self.record(int(p_r.xs[s_r]), int(p_r.qs[s_r]), p_r.row_action[r], float(p_r.row_cost[r]), "return")
            s_r = self.succ_r.draw(r, self.st.u())


class _BaselineRunner(_Runner):
    def __init__(self, m, plan: BaselinePlan, cfg):
        super().__init__(m, plan, cfg)
        self.p_o = plan.task_product
        self.out_choice = _Choice(self.p_o, plan.outbound.policy.probs)
        self.succ_o = _Succ(self.p_o)
        self.v_x = plan.return_value

    def start_outbound(self):
        self.s = self.p_o.initial
        self.seen.add(int(self.p_o.xs[self.s]))

    def in_accepting(self):
        return bool(self.out_union[self.s])

    def outbound_trapped(self):
        return self.v_x[self.p_o.xs[self.s]] <= ZERO_TOL

    def outbound_step(self, mode):
        p, s = self.p_o, self.s
        r = self.out_choice.draw(s, self.st.u())
        self.record(int(p.xs[s]), int(p.qs[s]), p.row_action[r], float(p.row_cost[r]), mode)
        self.s = self.succ_o.draw(r, self.st.u())

    def do_return(self) -> bool:
        x = int(self.p_o.xs[self.s])
        s_r = self.plan.ret.product.state_of(x, self.plan.dra_r.initial)
        return self.ret_walk(s_r)


class _HierRunner(_Runner):
    """Macro decisions on the task semi-product; options step the model."""

    def __init__(self, m, plan: HierarchicalPlan, cfg):
        super().__init__(m, plan, cfg)
        self.p_o = plan.task_product
        self.out_choice = _Choice(self.p_o, plan.outbound.policy.probs)
        self.semi_o, self.semi_r = plan.semi_o, plan.semi_r
        self.feat_o = np.zeros(m.n_states, dtype=bool)
        self.feat_o[self.semi_o.features] = True
        self.feat_r = np.zeros(m.n_states, dtype=bool)
        self.feat_r[self.semi_r.features] = True
        self.letters_o = np.array([plan.dra_o.letter(l) for l in m.labels])
        self.v_ext = plan.v_ext.values
        self.bridge = plan.v_ext.bridge
        self.tables = {}
        # once the task is abandoned the robot idles on its cheapest action
        order = np.lexsort((np.arange(m.n_rows), m.row_cost, m.row_state))
        _, first = np.unique(m.row_state[order], return_index=True)
        self.idle = order[first]

    def start_outbound(self):
        self.x = int(self.m.initial)
        self.s = self.p_o.initial
        self.opt = None
        self.dead = False
        self.seen.add(self.x)

    def in_accepting(self):
        return self.opt is None and not self.dead and bool(self.out_union[self.s])

    def outbound_trapped(self):
        return self.v_ext[self.x] <= ZERO_TOL

    def outbound_step(self, mode):
        if self.dead:
            r = int(self.idle[self.x])
            self.record(self.x, int(self.p_o.qs[self.s]), self.m.row_action[r], float(self.m.row_cost[r]), mode)
            self.x = self.succ_m.draw(r, self.st.u())
            return
        if self.opt is None:
            r = self.out_choice.draw(self.s, self.st.u())
            self.opt = self.semi_o.options[int(self.p_o.row_src[r])]
            self.q_next = int(self.plan.dra_o.delta[self.p_o.qs[self.s], self.letters_o[self.x]])
            if self.opt is None:
                self.dead = True
                return self.outbound_step(mode)
        q = int(self.p_o.qs[self.s])
        self.x, ok = self._option_step(self.opt, self.x, self.feat_o, q, mode)
        if not ok:
            self.dead = True
            self.outbound_step(mode)
        elif self.opt.ends_at(self.x, self.feat_o):
            self.s = self.p_o.state_of(self.semi_o.semi_index(self.x), self.q_next)
            self.opt = None

    def _option_step(self, o, x, feats, q, mode):
        table = self.tables.get(id(o))
        if table is None:
            table = self.tables[id(o)] = {}
        entry = table.get(x)
        if entry is None:
            rule = o.rule(x)
            if rule is None or not o.live[int(np.searchsorted(o.region, x))] or rule[1].sum() <= 0:
                entry = table[x] = ()
            else:
                rows, probs = rule
                entry = table[x] = (rows.tolist(), (np.cumsum(probs) / probs.sum()).tolist())
        if not entry:
            return x, False
        rows, cum = entry
        u = self.st.u()
        r = rows[-1]
        for rr, cp in zip(rows, cum):
            if u < cp:
                r = rr
                break
        self.record(x, q, self.m.row_action[r], float(self.m.row_cost[r]), mode)
        return self.succ_m.draw(r, self.st.u()), True

    def do_return(self) -> bool:
        x = self.x
        q0 = self.plan.dra_r.initial
        # bridge to the nearest useful return feature state
        while not self.feat_r[x]:
            if self.v_ext[x] <= ZERO_TOL:
                self.trapped = True
                return False
            if self.t >= self.cfg.horizon:
                return False
            r = int(self.bridge[x])
            self.record(x, q0, self.m.row_action[r], float(self.m.row_cost[r]), "return")
            x = self.succ_m.draw(r, self.st.u())
        return self.hier_return_from(self.semi_r.semi_index(x))

    def hier_return_from(self, i: int) -> bool:
        plan, p_r = self.plan, self.plan.ret.product
        s_r = p_r.state_of(i, plan.dra_r.initial)
        x = int(self.semi_r.features[i])
        while True:
            if self.ret_union[s_r]:
                return True
            if self.ret_vals[s_r] <= ZERO_TOL:
                self.trapped = True
                return False
            if self.t >= self.cfg.horizon:
                return False
            r = self.ret_choice.draw(s_r, self.st.u())
            o = self.semi_r.options[int(p_r.row_src[r])]
            if o is None:
                self.trapped = True
                return False
            q = int(p_r.qs[s_r])
            q_next = int(plan.dra_r.delta[q, plan.dra_r.letter(self.m.labels[x])])
            while True:
                if self.t >= self.cfg.horizon:
                    return False
                x, ok = self._option_step(o, x, self.feat_r, q, "return")
                if not ok:
                    self.trapped = True
                    return False
                if o.ends_at(x, self.feat_r):
                    break
            s_r = p_r.state_of(self.semi_r.semi_index(x), q_next)


def _aggregate(runs: list, visits: np.ndarray, cfg: SimConfig) -> SimulationReport:
    n = len(runs)
    req = [r for r in runs if r.request_time is not None]
    totals = np.array([r.total_cost for r in runs])
    suffix = np.array([r.suffix_cost for r in runs])
    prefix = [r.prefix_cost for r in runs if r.prefix_cost is not None]
    return SimulationReport(
        num_runs=n,
        sat_rate=sum(r.sat for r in runs) / n,
        safe_rate=(sum(bool(r.returned) for r in req) / len(req)) if req else None,
        n_requested=len(req),
        trapped_rate=sum(r.trapped for r in runs) / n,
        mean_cost=float(totals.mean()), std_cost=float(totals.std()),
        mean_suffix_cost=float(suffix.mean()), std_suffix_cost=float(suffix.std()),
        mean_prefix_cost=float(np.mean(prefix)) if prefix else None,
        outbound_visits=visits,
        runs=runs,
    )


_WORKER = None


def _run_chunk(bounds):
    lo, hi = bounds
    _WORKER.visits[:] = 0
    return [_WORKER.run(k) for k in range(lo, hi)], _WORKER.visits.copy()


def _execute(runner: _Runner, cfg: SimConfig, workers: int = 1) -> SimulationReport:
    """Run all episodes, optionally across forked worker processes.

    Every run owns its random stream, so the report does not depend on
    ``workers``.
    """
    global _WORKER
    n = cfg.num_runs
    workers = max(1, min(int(workers), n))
    if workers == 1 or "fork" not in mp.get_all_start_methods():
        runs = [runner.run(k) for k in range(n)]
        return _aggregate(runs, runner.visits, cfg)
    cuts = np.linspace(0, n, workers + 1).astype(int)
    _WORKER = runner
    try:
        with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as pool:
            parts = list(pool.map(_run_chunk, zip(cuts[:-1], cuts[1:])))
    finally:
        _WORKER = None
    runs = [r for part, _ in parts for r in part]
    visits = np.sum([v for _, v in parts], axis=0)
    return _aggregate(runs, visits, cfg)


def execute_baseline(m: LabeledMdp, plan: BaselinePlan, cfg: SimConfig, workers: int = 1) -> SimulationReport:
    return _execute(_BaselineRunner(m, plan, cfg), cfg, workers)


def execute_hierarchical(m: LabeledMdp, plan: HierarchicalPlan, cfg: SimConfig,
                         workers: int = 1) -> SimulationReport:
    return _execute(_HierRunner(m, plan, cfg), cfg, workers)


def execute(m: LabeledMdp, plan, cfg: SimConfig, workers: int = 1) -> SimulationReport:
    if plan.method == "hier":
        return execute_hierarchical(m, plan, cfg, workers)
    return execute_baseline(m, plan, cfg, workers)


def check_trace(m: LabeledMdp, trace: list) -> RunTrace:
    """Rebuild a :class:`RunTrace` from recorded rows and check ``l_t = L(x_t)``."""
    xs = [row[1] for row in trace]
    labels = [frozenset(row[4].split("|")) - {""} for row in trace]
    for x, l in zip(xs, labels):
        if l != m.labels[x]:
            raise AssertionError(f"label mismatch at state {x}")
    costs = np.cumsum([float(row[5]) for row in trace]).tolist()
    return RunTrace(xs, labels, [row[3] for row in trace], costs)


# ---------------------------------------------------------------- option probes


@dataclass(eq=False)
class OptionProbe:
    source: int
    target: int
    trials: int
    successes: int

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else float("nan")

    @property
    def sigma(self) -> float:
        p = self.rate
        return float(np.sqrt(p * (1 - p) / self.trials)) if self.trials else float("nan")


def probe_option_returns(m: LabeledMdp, plan: HierarchicalPlan, trials: int = 1000, seed: int = 0,
                         horizon: int = 10_000) -> list:
    """Mid-option return requests for every retained task macro action.

    Each trial runs the option to absorption, then replays it and issues the
    request at a uniformly drawn step of that run.
    """
    cfg = SimConfig(rng_seed=seed, horizon=horizon)
    runner = _HierRunner(m, plan, cfg)
    out = []
    for key, o in sorted((k, o) for k, o in plan.semi_o.options.items() if o is not None):
        ok = 0
        for j in range(trials):
            rng = np.random.default_rng(np.random.SeedSequence([seed, key, j]))
            runner.st = _Stream(rng)
            runner.trace, runner.costs, runner.seen = None, [], set()
            runner.trapped, runner.t = False, 0
            x, path = o.source, [o.source]
            while runner.t < horizon:
                x, good = runner._option_step(o, x, runner.feat_o, 0, "prefix")
                if not good or o.ends_at(x, runner.feat_o):
                    break
                path.append(x)
            runner.x = path[int(rng.integers(len(path)))]
            runner.t = 0
            ok += bool(runner.do_return())
        out.append(OptionProbe(o.source, o.target, trials, ok))
    return out


# ---------------------------------------------------------------- comparison


@dataclass(eq=False)
class ComparisonTable:
    rows: list

    HEADER = ("name", "method", "sat_rate", "safe_rate", "trapped_rate", "mean_cost",
              "mean_suffix_cost", "synthesis_s")

    def to_text(self) -> str:
        cells = [self.HEADER] + [tuple(_fmt(v) for v in r) for r in self.rows]
        widths = [max(len(c[i]) for c in cells) for i in range(len(self.HEADER))]
        return "\n".join("  ".join(c[i].ljust(widths[i]) for i in range(len(widths))).rstrip()
                         for c in cells) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def compare_plans(m: LabeledMdp, plans: list, cfg: SimConfig, names=None, workers: int = 1) -> ComparisonTable:
    if len(plans) < 2:
        raise ValueError("compare_plans needs at least two plans")
    names = names or [f"plan{i}" for i in range(len(plans))]
    rows = []
    for name, pl in zip(names, plans):
        rep = execute(m, pl, cfg, workers)
        rows.append((name, pl.method, rep.sat_rate, rep.safe_rate, rep.trapped_rate, rep.mean_cost,
                     rep.mean_suffix_cost, float(getattr(pl, "synthesis_seconds", float("nan")))))
    return ComparisonTable(rows)
