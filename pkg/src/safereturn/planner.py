"""Baseline and hierarchical safe-return planning, plus plan serialization.

The baseline planner works on products of the full model.  The
hierarchical planner abstracts the model into feature-state semi-MDPs
first: the return side yields a value that every task option must respect,
so the outbound synthesis on the task semi-product only needs the
satisfaction bound.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .abstraction import (ExtendedReturnValue, OptionPolicy, SemiMdp, _assemble,
                          build_safe_semi_mdp, build_task_semi_mdp, extend_return_value,
                          feature_mask, effective_features)
from .automata import Dra, parse_hoa, serialize_hoa
from .errors import (EmptyAmec, EmptyFeatureSet, Infeasible, PlanModelMismatch,
                     SafetyUnsatisfiable, TaskInfeasible)
from .model import LabeledMdp, StationaryPolicy, solve_reach
from .product import Amec, ProductMdp, build_product, compute_amecs
from .synthesis import (OutboundPlan, SafetyMode, co_optimize_prefix_suffix,
                        forbidden_states)

ZERO_TOL = 1e-12


@dataclass(frozen=True)
class PlanConfig:
    chi_o: float = 0.8
    chi_r: float = 0.9
    safety_mode: SafetyMode = SafetyMode.CUMULATIVE
    epsilon_suffix: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "safety_mode", SafetyMode(self.safety_mode))
        for name in ("chi_o", "chi_r"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v} outside [0, 1]")
        if not 0.0 < self.epsilon_suffix <= 0.5:
            raise ValueError("epsilon_suffix must lie in (0, 0.5]")

    def to_json(self) -> dict:
        d = asdict(self)
        d["safety_mode"] = self.safety_mode.value
        return d


@dataclass(eq=False)
class ReturnSide:
    """Return product, its accepting set, max-reach policy and values."""

    product: ProductMdp
    amec: Amec
    policy: StationaryPolicy
    values: np.ndarray


@dataclass(eq=False)
class BaselinePlan:
    model: LabeledMdp
    dra_o: Dra
    dra_r: Dra
    cfg: PlanConfig
    ret: ReturnSide
    return_value: np.ndarray
    task_product: ProductMdp
    task_amec: Amec
    outbound: OutboundPlan
    fingerprint: str
    method: str = "baseline"
    synthesis_seconds: float = 0.0


@dataclass(eq=False)
class HierarchicalPlan:
    model: LabeledMdp
    dra_o: Dra
    dra_r: Dra
    cfg: PlanConfig
    semi_r: SemiMdp
    ret: ReturnSide
    v_semi: np.ndarray
    v_ext: ExtendedReturnValue
    semi_o: SemiMdp
    task_product: ProductMdp
    task_amec: Amec
    outbound: OutboundPlan
    fingerprint: str
    method: str = "hier"
    synthesis_seconds: float = 0.0

    @property
    def options_o(self) -> dict:
        return self.semi_o.options

    @property
    def options_r(self) -> dict:
        return self.semi_r.options


# ---------------------------------------------------------------- fingerprint


def _canon(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def model_digest(m: LabeledMdp) -> str:
    return hashlib.sha256(_canon(m.to_json())).hexdigest()


def fingerprint(m: LabeledMdp, dra_o: Dra, dra_r: Dra, cfg: PlanConfig, method: str) -> str:
    h = hashlib.sha256()
    for part in (model_digest(m).encode(), serialize_hoa(dra_o).encode(),
                 serialize_hoa(dra_r).encode(), _canon(cfg.to_json()), method.encode()):
        h.update(part)
        h.update(b"\0")
    return h.hexdigest()


# ---------------------------------------------------------------- helpers


def _return_side(m: LabeledMdp, d: Dra, starts, rejecting=None) -> ReturnSide:
    p = build_product(m, d, roots=[(int(x), d.initial) for x in starts], rejecting=rejecting)
    amec = compute_amecs(p)
    if amec.empty:
        raise SafetyUnsatisfiable("return automaton has no accepting end component in the model")
    v, choice = solve_reach(p, amec.union, min_cost=True)
    for s in np.flatnonzero(choice < 0):
        choice[s] = p.state_ptr[s]
    pi = StationaryPolicy.deterministic(p, choice, "return")
    return ReturnSide(p, amec, pi, np.clip(v, 0.0, 1.0))


def _at_q0(ret: ReturnSide, xs, q0: int) -> np.ndarray:
    return np.array([ret.values[ret.product.state_of(int(x), q0)] for x in xs])


def _outbound(p: ProductMdp, amec: Amec, cfg: PlanConfig, v_ret, mode, chi_r, durations=None) -> OutboundPlan:
    if amec.empty:
        err = TaskInfeasible("chi_o: task automaton has no accepting end component")
        err.bound = "chi_o"
        raise err
    try:
        return co_optimize_prefix_suffix(p, amec, cfg.chi_o, chi_r, v_ret, mode,
                                         cfg.epsilon_suffix, durations=durations)
    except (Infeasible, EmptyAmec) as exc:
        bound = getattr(exc, "bound", "chi_o")
        err = TaskInfeasible(f"{bound}: {exc}" if not str(exc).startswith(bound) else str(exc))
        err.bound = bound
        raise err from None


# ---------------------------------------------------------------- planners


def plan_baseline(m: LabeledMdp, dra_o: Dra, dra_r: Dra, cfg: PlanConfig) -> BaselinePlan:
    """Flat products of the full model (return side first, then outbound)."""
    t0 = time.perf_counter()
    ret = _return_side(m, dra_r, range(m.n_states))
    v_x = _at_q0(ret, range(m.n_states), dra_r.initial)
    if cfg.chi_r > 0 and v_x[m.initial] <= ZERO_TOL:
        raise SafetyUnsatisfiable("return value is zero at the initial state")
    p_o = build_product(m, dra_o)
    amec_o = compute_amecs(p_o, forbidden_states(v_x[p_o.xs], cfg.chi_r, cfg.safety_mode))
    outbound = _outbound(p_o, amec_o, cfg, v_x[p_o.xs], cfg.safety_mode, cfg.chi_r)
    return BaselinePlan(m, dra_o, dra_r, cfg, ret, v_x, p_o, amec_o, outbound,
                        fingerprint(m, dra_o, dra_r, cfg, "baseline"),
                        synthesis_seconds=time.perf_counter() - t0)


def plan_hierarchical(m: LabeledMdp, dra_o: Dra, dra_r: Dra, cfg: PlanConfig) -> HierarchicalPlan:
    """Semi-MDP abstraction of both halves; safety lives in the task options."""
    t0 = time.perf_counter()
    try:
        semi_r = build_safe_semi_mdp(m, dra_r)
    except EmptyFeatureSet as exc:
        raise SafetyUnsatisfiable(str(exc)) from None
    pl = _hier_from_semi_r(m, dra_o, dra_r, cfg, semi_r)
    pl.synthesis_seconds = time.perf_counter() - t0
    return pl


def _hier_from_semi_r(m, dra_o, dra_r, cfg, semi_r, semi_o=None) -> HierarchicalPlan:
    k = semi_r.features.size
    ret = _return_side(semi_r.mdp, dra_r, range(k), semi_r.rejecting)
    v_semi = _at_q0(ret, range(k), dra_r.initial)
    if not np.any(v_semi > ZERO_TOL):
        raise SafetyUnsatisfiable("all return values are zero")
    v_ext = extend_return_value(m, semi_r, v_semi)
    if cfg.chi_r > 0 and v_ext.values[m.initial] <= ZERO_TOL:
        raise SafetyUnsatisfiable("return value is zero at the initial state")
    if semi_o is None:
        semi_o = build_task_semi_mdp(m, dra_o, v_ext.values, cfg.chi_r, cfg.safety_mode)
    p_o = build_product(semi_o.mdp, dra_o, rejecting=semi_o.rejecting)
    amec_o = compute_amecs(p_o)
    try:
        outbound = _outbound(p_o, amec_o, cfg, np.ones(p_o.n_states), SafetyMode.CUMULATIVE, 0.0,
                             durations=semi_o.durations[p_o.row_src])
    except TaskInfeasible as exc:
        if cfg.chi_r > 0 and v_ext.values[m.initial] < cfg.chi_r - ZERO_TOL:
            exc.bound = "chi_r"
            exc.args = (f"chi_r: initial return value {v_ext.values[m.initial]:.4g} below chi_r",)
        raise
    return HierarchicalPlan(m, dra_o, dra_r, cfg, semi_r, ret, v_semi, v_ext, semi_o, p_o, amec_o,
                            outbound, fingerprint(m, dra_o, dra_r, cfg, "hier"))


def plan(m: LabeledMdp, dra_o: Dra, dra_r: Dra, cfg: PlanConfig, method: str = "hier"):
    if method == "baseline":
        return plan_baseline(m, dra_o, dra_r, cfg)
    if method == "hier":
        return plan_hierarchical(m, dra_o, dra_r, cfg)
    raise ValueError(f"unknown method {method!r}")


def build_extended_model(m: LabeledMdp) -> LabeledMdp:
    """Two-level model where level 0 jumps to level 1 with probability 0.5.

    State ``x + i * n`` is ``(x, i)``.  Level 1 copies the model and never
    returns to level 0.
    """
    n = m.n_states
    recs = []
    for lvl in (0, 1):
        for x, a, c, dist in m.records():
            if lvl == 0:
                out = [(y, 0.5 * p) for y, p in dist] + [(y + n, 0.5 * p) for y, p in dist]
            else:
                out = [(y + n, p) for y, p in dist]
            recs.append((x + lvl * n, a, c, out))
    coords = None if m.coords is None else list(m.coords) * 2
    return LabeledMdp.from_transitions(2 * n, m.ap, list(m.labels) * 2, m.initial, recs, coords)


# ---------------------------------------------------------------- JSON


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float)]


def plan_to_json(pl) -> dict:
    """Self-contained plan document (policies are stored, products rebuilt)."""
    doc = {
        "method": pl.method,
        "fingerprint": pl.fingerprint,
        "model_sha256": model_digest(pl.model),
        "config": pl.cfg.to_json(),
        "dra_o": serialize_hoa(pl.dra_o, "task"),
        "dra_r": serialize_hoa(pl.dra_r, "return"),
        "return_policy": _floats(pl.ret.policy.probs),
        "return_values": _floats(pl.ret.values),
        "outbound_policy": _floats(pl.outbound.policy.probs),
        "prefix": {"reach": pl.outbound.prefix.reach, "cost": pl.outbound.prefix.cost,
                   "cumulative_safety": pl.outbound.prefix.cumulative_safety,
                   "min_visited_return": pl.outbound.prefix.min_visited_return,
                   "entry": [[int(s), float(f)] for s, f in sorted(pl.outbound.prefix.entry.items())]},
        "suffix_gains": _floats(pl.outbound.suffix.gains),
        "plan_cost": float(pl.outbound.plan_cost),
        "task_product_states": int(pl.task_product.n_states),
        "return_product_states": int(pl.ret.product.n_states),
    }
    if pl.method == "hier":
        doc["v_semi"] = _floats(pl.v_semi)
        doc["v_ext"] = _floats(pl.v_ext.values)
        doc["bridge"] = [int(r) for r in pl.v_ext.bridge]
        for key, semi in (("semi_r", pl.semi_r), ("semi_o", pl.semi_o)):
            doc[key] = {
                "features": [int(x) for x in semi.features],
                "options": [o.to_json() for _, o in sorted(semi.options.items()) if o is not None],
                "removed": [list(map(int, r)) for r in semi.removed],
            }
    else:
        doc["return_value"] = _floats(pl.return_value)
    return doc


def save_plan(pl, path) -> None:
    with open(path, "w") as fh:
        json.dump(plan_to_json(pl), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _semi_from_json(m: LabeledMdp, d: dict) -> SemiMdp:
    feats = np.zeros(m.n_states, dtype=bool)
    feats[d["features"]] = True
    opts = {}
    for od in d["options"]:
        o = OptionPolicy.from_json(od)
        opts[(o.source, o.target)] = o
    return _assemble(m, feats, opts, [tuple(r) for r in d["removed"]])


def plan_from_json(doc: dict, m: LabeledMdp):
    """Rebuild a plan from :func:`plan_to_json` output against model ``m``.

    Products and AMECs are recomputed; policies and values are taken from
    the document.  Raises :class:`PlanModelMismatch` for a different model.
    """
    if doc.get("model_sha256") != model_digest(m):
        raise PlanModelMismatch("plan was synthesized for a different model")
    cfg = PlanConfig(**doc["config"])
    dra_o, dra_r = parse_hoa(doc["dra_o"]), parse_hoa(doc["dra_r"])
    method = doc["method"]
    if fingerprint(m, dra_o, dra_r, cfg, method) != doc["fingerprint"]:
        raise PlanModelMismatch("plan fingerprint does not match its contents")
    if method == "hier":
        semi_r = _semi_from_json(m, doc["semi_r"])
        semi_o = _semi_from_json(m, doc["semi_o"])
        k = semi_r.features.size
        p_r = build_product(semi_r.mdp, dra_r, roots=[(i, dra_r.initial) for i in range(k)],
                            rejecting=semi_r.rejecting)
        p_o = build_product(semi_o.mdp, dra_o, rejecting=semi_o.rejecting)
        v_ext = ExtendedReturnValue(np.array(doc["v_ext"]), np.array(doc["bridge"], dtype=np.int64))
    else:
        p_r = build_product(m, dra_r, roots=[(x, dra_r.initial) for x in range(m.n_states)])
        p_o = build_product(m, dra_o)
    if p_o.n_states != doc["task_product_states"] or p_r.n_states != doc["return_product_states"]:
        raise PlanModelMismatch("rebuilt products differ from the stored plan")
    ret = ReturnSide(p_r, compute_amecs(p_r), StationaryPolicy(np.array(doc["return_policy"]), "return"),
                     np.array(doc["return_values"]))
    excl = None if method == "hier" else forbidden_states(
        np.array(doc["return_value"])[p_o.xs], cfg.chi_r, cfg.safety_mode)
    amec_o = compute_amecs(p_o, excl)
    pol = StationaryPolicy(np.array(doc["outbound_policy"]), "outbound")
    outbound = OutboundPlan(prefix=None, suffix=None, plan_cost=doc["plan_cost"], policy=pol)
    if method == "hier":
        return HierarchicalPlan(m, dra_o, dra_r, cfg, semi_r, ret, np.array(doc["v_semi"]), v_ext,
                                semi_o, p_o, amec_o, outbound, doc["fingerprint"])
    return BaselinePlan(m, dra_o, dra_r, cfg, ret, np.array(doc["return_value"]), p_o, amec_o, outbound,
                        doc["fingerprint"])


def load_plan(path, m: LabeledMdp):
    with open(path) as fh:
        return plan_from_json(json.load(fh), m)


def semi_feature_count(m: LabeledMdp, d: Dra) -> int:
    return int(feature_mask(m, d, effective_features(d)).sum())
