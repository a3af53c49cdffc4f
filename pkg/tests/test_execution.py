import numpy as np
import pytest

from conftest import dra
from safereturn.errors import PlanModelMismatch
from safereturn.execution import (FixedTime, Geometric, SimConfig, UniformOver, check_trace, compare_plans,
                                  execute, parse_request)
from safereturn.planner import PlanConfig, plan
from safereturn.synthesis import SafetyMode
from safereturn.workspace import grid_to_mdp, parse_map

CORRIDOR = """[grid]
#######
#H...B#
#######
[legend]
H = bs, stay
B = r1
[motion]
p_intent = 1.0
p_drift_left = 0.0
p_drift_right = 0.0
initial = 1,1
"""


@pytest.fixture(scope="module")
def corridor():
    return grid_to_mdp(parse_map(CORRIDOR))


@pytest.fixture(scope="module")
def corridor_plans(corridor, safe_return_bs):
    return {mth: plan(corridor, dra("surveil(r1)"), safe_return_bs, PlanConfig(1.0, 1.0), mth)
            for mth in ("baseline", "hier")}


@pytest.fixture(scope="module")
def hw_plans(hardware, safe_return_bs):
    return {mth: plan(hardware, dra("surveil(r1, r2)"), safe_return_bs, PlanConfig(0.75, 0.95), mth)
            for mth in ("baseline", "hier")}


METHODS = ["baseline", "hier"]


@pytest.mark.parametrize("method", METHODS)
def test_deterministic_world(corridor, corridor_plans, method):
    rep = execute(corridor, corridor_plans[method], SimConfig(horizon=100, num_runs=20))
    assert rep.sat_rate == 1.0 and rep.trapped_rate == 0.0
    assert rep.safe_rate is None and rep.n_requested == 0
    # the surveillance loop costs one per step
    assert rep.mean_cost == 100.0


@pytest.mark.parametrize("method", METHODS)
def test_request_at_start_in_safe_cell(corridor, corridor_plans, method):
    rep = execute(corridor, corridor_plans[method], SimConfig(horizon=50, num_runs=10, request_law=FixedTime(0)))
    assert rep.n_requested == 10 and rep.safe_rate == 1.0
    # one step reads the home label before the return automaton settles
    assert all(r.steps == 1 and r.trace is None for r in rep.runs)


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("t_req", [1, 3, 4, 6])
def test_return_walks_home(corridor, corridor_plans, method, t_req):
    # state index equals the column offset from home, so the shortest way back takes that many moves west
    rep = execute(corridor, corridor_plans[method],
                  SimConfig(horizon=50, num_runs=3, request_law=FixedTime(t_req), record_traces=True))
    for r in rep.runs:
        assert r.returned and not r.trapped
        ret = [row for row in r.trace if row[6] == "return"]
        walk = ret[0][1]
        assert walk > 0
        assert r.steps == t_req + walk + 1
        assert [row[3] for row in ret[:walk]] == ["W"] * walk
        assert ret[-1][1] == 0 and ret[-1][4] == "bs"


@pytest.mark.parametrize("method", METHODS)
def test_hardware_returns_succeed(hardware, hw_plans, method):
    cfg = SimConfig(rng_seed=5, horizon=400, num_runs=200, request_law=UniformOver(0, 100))
    rep = execute(hardware, hw_plans[method], cfg)
    assert rep.n_requested == 200
    assert rep.safe_rate >= 0.95 - 3 * np.sqrt(0.95 * 0.05 / 200)


@pytest.mark.parametrize("method", METHODS)
def test_label_consistency(hardware, hw_plans, method):
    rep = execute(hardware, hw_plans[method],
                  SimConfig(rng_seed=2, horizon=200, num_runs=20, request_law=Geometric(0.02), record_traces=True))
    for r in rep.runs:
        check_trace(hardware, r.trace)
    bad = [list(row) for row in rep.runs[0].trace]
    bad[0][4] = "nonsense"
    with pytest.raises(AssertionError):
        check_trace(hardware, bad)


@pytest.mark.parametrize("method", METHODS)
def test_reproducible_and_worker_independent(hardware, hw_plans, method):
    cfg = SimConfig(rng_seed=11, horizon=300, num_runs=40, request_law=Geometric(0.01))
    a = execute(hardware, hw_plans[method], cfg)
    b = execute(hardware, hw_plans[method], cfg)
    c = execute(hardware, hw_plans[method], cfg, workers=2)
    assert a.to_json() == b.to_json() == c.to_json()
    assert np.array_equal(a.outbound_visits, c.outbound_visits)


@pytest.mark.parametrize("method", METHODS)
def test_sat_monotone_in_horizon(hardware, hw_plans, method):
    short = execute(hardware, hw_plans[method], SimConfig(rng_seed=4, horizon=100, num_runs=100,
                                                          request_law=Geometric(0.005)))
    long = execute(hardware, hw_plans[method], SimConfig(rng_seed=4, horizon=1000, num_runs=100,
                                                         request_law=Geometric(0.005)))
    # runs share streams, so every run satisfied early stays satisfied
    for s, l in zip(short.runs, long.runs):
        assert l.sat >= s.sat
    assert long.sat_rate >= short.sat_rate


def test_return_bound_reduces_trapping(office, safe_return_bs):
    task = dra("surveil(r1, r2, r3)")
    cfg = SimConfig(rng_seed=3, horizon=300, num_runs=1000, request_law=Geometric(0.01))
    loose, tight = (execute(office, plan(office, task, safe_return_bs, PlanConfig(0.8, cr, SafetyMode.STATEWISE),
                                         "baseline"), cfg) for cr in (0.0, 0.9))
    assert tight.trapped_rate == 0.0
    assert loose.trapped_rate > tight.trapped_rate
    assert tight.safe_rate > loose.safe_rate


def test_model_mismatch(office, hardware, hw_plans):
    with pytest.raises(PlanModelMismatch):
        execute(office, hw_plans["baseline"], SimConfig(num_runs=1))


def test_parse_request():
    assert parse_request(None) is None and parse_request("none") is None
    assert parse_request("geometric:0.05") == Geometric(0.05)
    assert parse_request("geometric") == Geometric(0.01)
    assert parse_request("fixed:7") == FixedTime(7)
    assert parse_request("uniform:2,9") == UniformOver(2, 9)
    for bad in ("geometric:0", "fixed:-1", "uniform:5,2", "poisson:3", "fixed:x"):
        with pytest.raises(ValueError):
            parse_request(bad)


def test_config_validation():
    for kw in ({"horizon": 0}, {"num_runs": 0}, {"suffix_window": 0.0}):
        with pytest.raises(ValueError):
            SimConfig(**kw)


def test_compare_identical_plans(hardware, hw_plans):
    pl = hw_plans["hier"]
    cfg = SimConfig(rng_seed=1, horizon=200, num_runs=30, request_law=Geometric(0.02))
    tab = compare_plans(hardware, [pl, pl], cfg, names=["a", "b"])
    assert tab.rows[0][1:7] == tab.rows[1][1:7]
    text = tab.to_text().splitlines()
    assert text[0].split()[:3] == ["name", "method", "sat_rate"] and len(text) == 3
    assert tab.to_csv().count("\n") == 3
    with pytest.raises(ValueError):
        compare_plans(hardware, [pl], cfg)


def test_report_serialization(hardware, hw_plans):
    rep = execute(hardware, hw_plans["baseline"], SimConfig(horizon=50, num_runs=5, record_traces=True))
    assert rep.summary()["safe_rate"] == "n/a"
    assert rep.to_csv().count("\n") == 2
    rows = rep.traces_csv().splitlines()
    assert rows[0] == "run,t,x,q,action,label,cost,mode"
    assert len(rows) == 1 + sum(r.steps for r in rep.runs)
