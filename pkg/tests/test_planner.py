import json

import numpy as np
import pytest

from conftest import dra
from safereturn.errors import PlanModelMismatch, SafetyUnsatisfiable, TaskInfeasible
from safereturn.execution import Geometric, SimConfig, execute
from safereturn.planner import (PlanConfig, build_extended_model, plan, plan_from_json, plan_to_json,
                                semi_feature_count)
from safereturn.synthesis import SafetyMode
from safereturn.workspace import grid_to_mdp, parse_map, scaled_grid

TINY = """[grid]
#####
#S.B#
#####
[legend]
B = bs, r1, stay
[motion]
p_intent = 1.0
p_drift_left = 0.0
p_drift_right = 0.0
"""


@pytest.fixture(scope="module")
def tiny():
    return grid_to_mdp(parse_map(TINY))


@pytest.mark.parametrize("method", ["baseline", "hier"])
def test_task_inside_safe_region(tiny, safe_return_bs, method):
    pl = plan(tiny, dra("surveil(r1)"), safe_return_bs, PlanConfig(1.0, 1.0), method)
    assert pl.outbound.prefix.reach == pytest.approx(1.0)
    rep = execute(tiny, pl, SimConfig(rng_seed=1, horizon=200, num_runs=50))
    assert rep.sat_rate == 1.0 and rep.trapped_rate == 0.0
    rep = execute(tiny, pl, SimConfig(rng_seed=1, horizon=200, num_runs=50, request_law=Geometric(0.05)))
    assert rep.n_requested > 0 and rep.safe_rate == 1.0 and rep.trapped_rate == 0.0


@pytest.mark.parametrize("method", ["baseline", "hier"])
def test_sweep_high_satisfiability_bound_is_infeasible(sweep, safe_return_bs, method):
    with pytest.raises(TaskInfeasible) as e:
        plan(sweep, dra("surveil(r1, r2)"), safe_return_bs, PlanConfig(0.9, 0.9), method)
    assert e.value.bound == "chi_o"


@pytest.mark.parametrize("method", ["baseline", "hier"])
def test_hardware_bounds_are_feasible(hardware, safe_return_bs, method):
    pl = plan(hardware, dra("surveil(r1, r2)"), safe_return_bs, PlanConfig(0.75, 0.95), method)
    assert pl.outbound.prefix.reach >= 0.75 - 1e-9


def test_unholdable_return_region_is_safety_unsatisfiable():
    # every move leaves the only bs cell, so no run can settle there
    text = """[grid]
#####
#...#
#.B.#
#S..#
#####
[legend]
B = bs, r1
[motion]
p_intent = 1.0
p_drift_left = 0.0
p_drift_right = 0.0
"""
    m = grid_to_mdp(parse_map(text))
    for method in ("baseline", "hier"):
        with pytest.raises(SafetyUnsatisfiable):
            plan(m, dra("surveil(r1)"), dra("safe_return(bs)"), PlanConfig(0.5, 0.5), method)


@pytest.mark.parametrize("name", ["sweep", "office"])
def test_feasibility_verdicts_agree(name, request, safe_return_bs):
    m = request.getfixturevalue(name)
    task = dra("surveil(r1, r2, r3)" if name == "office" else "surveil(r1, r2)")
    for co in (0.0, 0.5, 0.9):
        for cr in (0.0, 0.5, 0.9):
            verdict = {}
            for method in ("baseline", "hier"):
                try:
                    plan(m, task, safe_return_bs, PlanConfig(co, cr, SafetyMode.STATEWISE), method)
                    verdict[method] = True
                except (TaskInfeasible, SafetyUnsatisfiable):
                    verdict[method] = False
            assert verdict["baseline"] == verdict["hier"], (name, co, cr)


@pytest.mark.parametrize("method", ["baseline", "hier"])
def test_plans_are_byte_identical(hardware, safe_return_bs, method):
    docs = [json.dumps(plan_to_json(plan(hardware, dra("surveil(r1, r2)"), safe_return_bs,
                                         PlanConfig(0.75, 0.95, rng_seed=3), method)), sort_keys=True)
            for _ in range(2)]
    assert docs[0] == docs[1]


@pytest.mark.parametrize("method", ["baseline", "hier"])
def test_plan_json_round_trip(hardware, office, safe_return_bs, method):
    pl = plan(hardware, dra("surveil(r1, r2)"), safe_return_bs, PlanConfig(0.75, 0.95), method)
    doc = json.loads(json.dumps(plan_to_json(pl)))
    back = plan_from_json(doc, hardware)
    assert np.array_equal(back.outbound.policy.probs, pl.outbound.policy.probs)
    assert back.task_product.n_states == pl.task_product.n_states
    with pytest.raises(PlanModelMismatch):
        plan_from_json(doc, office)


def test_abstract_product_does_not_grow_with_resolution(safe_return_bs):
    task = dra("surveil(r1, r2, r3)")
    sizes = []
    for n in (12, 24):
        m = grid_to_mdp(scaled_grid(n))
        pl = plan(m, task, safe_return_bs, PlanConfig(0.8, 0.9), "hier")
        sizes.append(pl.task_product.n_states)
        assert semi_feature_count(m, task) == 3
    assert sizes[1] <= sizes[0]


def test_extended_model(hardware):
    ext = build_extended_model(hardware)
    n = hardware.n_states
    assert ext.n_states == 2 * n
    sums = np.asarray(ext.trans.sum(axis=1)).ravel()
    assert np.allclose(sums, 1.0, atol=1e-12)
    # level 0 splits every move evenly between the levels
    for x, _, _, dist in ext.records():
        if x < n:
            lo = sum(p for y, p in dist if y < n)
            assert lo == pytest.approx(0.5)
    # level 1 is the original model shifted by n
    lvl1 = [(x - n, a, c, [(y - n, p) for y, p in d]) for x, a, c, d in ext.records() if x >= n]
    assert lvl1 == hardware.records()
    assert all(y >= n for x, _, _, d in ext.records() if x >= n for y, _ in d)
    assert ext.labels[n:] == hardware.labels
