import numpy as np
import pytest

from conftest import dra, make_mdp
from safereturn.abstraction import (build_safe_semi_mdp, build_task_semi_mdp, effective_features,
                                    extend_return_value, OptionPolicy)
from safereturn.automata import Dra, Reach, SafeReturn, template_dra
from safereturn.errors import EmptyFeatureSet
from safereturn.model import MarkovChain, StationaryPolicy, absorbing_distribution, induce_chain
from safereturn.planner import PlanConfig, plan_hierarchical
from safereturn.synthesis import SafetyMode

F = frozenset


def test_effective_features_accept_all_is_empty():
    assert effective_features(Dra(("a",), [[0, 0]], 0, [((), (0,))])) == F()


def test_effective_features_reach():
    assert effective_features(template_dra(Reach("a"))) == {F({"a"})}


def test_effective_features_example_safe_return():
    # enumerated from the delta table of the built automaton
    d = template_dra(SafeReturn(Reach("ex"), ("bs",)))
    assert effective_features(d) == {F(), F({"bs"}), F({"ex"}), F({"bs", "ex"})}


def corridor():
    # a - . - b, deterministic east/west moves
    recs = [(0, "E", 1.0, [(1, 1.0)]), (1, "E", 1.0, [(2, 1.0)]), (1, "W", 1.0, [(0, 1.0)]),
            (2, "W", 1.0, [(1, 1.0)])]
    return make_mdp(3, recs, labels=[["a"], [], ["b"]])


def test_semi_corridor_is_deterministic():
    m = corridor()
    semi = build_safe_semi_mdp(m, dra("surveil(a, b)"))
    assert semi.features.tolist() == [0, 2]
    o = next(o for o in semi.options.values() if o is not None and (o.source, o.target) == (0, 2))
    assert o.dist == {2: 1.0, None: 0.0}
    assert o.reach_prob == 1.0


def test_semi_branch_to_other_sink():
    # 0 (a) -> 1 -> 0.5 to 2 (b) / 0.5 to 3 (c); absorbing distribution by hand: 0.5 / 0.5
    recs = [(0, "go", 1.0, [(1, 1.0)]), (1, "go", 1.0, [(2, 0.5), (3, 0.5)]),
            (2, "s", 1.0, [(2, 1.0)]), (3, "s", 1.0, [(3, 1.0)])]
    m = make_mdp(4, recs, labels=[["a"], [], ["b"], ["c"]])
    semi = build_safe_semi_mdp(m, dra("surveil(a, b, c)"))
    o = next(o for o in semi.options.values() if o is not None and (o.source, o.target) == (0, 2))
    assert o.dist[2] == pytest.approx(0.5) and o.dist[3] == pytest.approx(0.5)
    assert o.dist[None] == pytest.approx(0.0)
    # unreachable pairs are dropped
    assert (2, 0) in semi.removed and (3, 0) in semi.removed


def test_empty_feature_set():
    with pytest.raises(EmptyFeatureSet):
        build_safe_semi_mdp(corridor(), dra("reach(a)"), theta=F())


def test_semi_rows_are_stochastic_and_sizes_bounded(office, safe_return_bs):
    semi = build_safe_semi_mdp(office, safe_return_bs)
    k = semi.features.size
    assert semi.n_macros <= k * (k - 1)
    sums = np.asarray(semi.mdp.trans.sum(axis=1)).ravel()
    assert np.allclose(sums, 1.0, atol=1e-8)
    for o in semi.options.values():
        if o is not None:
            assert sum(o.dist.values()) == pytest.approx(1.0, abs=1e-8)
            assert o.reach_prob == pytest.approx(o.dist.get(o.target, 0.0), abs=1e-8)
    # feature states are exactly the states whose label meets an effective feature
    d = safe_return_bs
    want = [x for x, l in enumerate(office.labels) if d.letter(l) and d.letter_set(d.letter(l)) in effective_features(d)]
    assert semi.features.tolist() == want


def test_macro_distributions_match_independent_absorption(office, safe_return_bs):
    semi = build_safe_semi_mdp(office, safe_return_bs)
    sinks_all = set(semi.features.tolist())
    for o in semi.options.values():
        if o is None:
            continue
        probs = o.row_probs(office.n_rows)
        sinks = sorted(sinks_all - {o.source})
        # states outside the rule absorb; sinks are made absorbing explicitly
        p = induce_chain(office, StationaryPolicy(_complete(office, probs, sinks))).trans.tolil()
        for s in sinks:
            p[s, :] = 0.0
            p[s, s] = 1.0
        d = absorbing_distribution(MarkovChain(p.tocsr(), np.eye(office.n_states)[o.source]), sinks, o.source)
        for s in sinks:
            assert d[s] == pytest.approx(o.dist.get(s, 0.0), abs=1e-8)


def _complete(m, probs, sinks):
    probs = probs.copy()
    for x in range(m.n_states):
        rows = list(m.rows(x))
        if probs[rows].sum() == 0:
            probs[rows[0]] = 1.0
    return probs


def test_task_semi_with_zero_bound_matches_safe_construction():
    m = corridor()
    d = dra("surveil(a, b)")
    a = build_safe_semi_mdp(m, d)
    b = build_task_semi_mdp(m, d, np.ones(3), 0.0, SafetyMode.STATEWISE)
    pairs = lambda s: {(o.source, o.target): o.dist for o in s.options.values() if o is not None}
    assert pairs(a) == pairs(b)


def test_task_option_through_trapped_region_is_removed():
    m = corridor()
    b = build_task_semi_mdp(m, dra("surveil(a, b)"), np.array([1.0, 0.0, 1.0]), 0.9, SafetyMode.STATEWISE)
    assert b.n_macros == 0
    assert (0, 2) in b.removed


def test_option_cost_of_three_step_path():
    recs = [(i, "E", 1.0, [(i + 1, 1.0)]) for i in range(3)] + [(3, "W", 1.0, [(2, 1.0)])]
    m = make_mdp(4, recs, labels=[["a"], [], [], ["b"]])
    semi = build_task_semi_mdp(m, dra("surveil(a, b)"), np.ones(4), 0.5, SafetyMode.CUMULATIVE)
    o = next(o for o in semi.options.values() if o is not None and o.source == 0)
    assert o.expected_cost == pytest.approx(3.0)
    assert o.duration == pytest.approx(3.0)


def test_cumulative_options_meet_bound(hardware, safe_return_bs):
    pl = plan_hierarchical(hardware, dra("surveil(r1, r2)"), safe_return_bs,
                           PlanConfig(0.75, 0.95, SafetyMode.CUMULATIVE))
    kept = [o for o in pl.semi_o.options.values() if o is not None]
    assert kept
    for o in kept:
        assert o.safety_value >= 0.95 - 1e-9


def test_extend_return_value_examples():
    # 0 and 1 are feature states valued 0.3 and 0.8; 2 steps to either; 3 is isolated
    recs = [(0, "s", 1.0, [(0, 1.0)]), (1, "s", 1.0, [(1, 1.0)]), (2, "l", 1.0, [(0, 1.0)]),
            (2, "r", 1.0, [(1, 1.0)]), (3, "s", 1.0, [(3, 1.0)])]
    m = make_mdp(4, recs, labels=[["bs"], ["bs"], [], []])

    class Semi:
        features = np.array([0, 1])

    ext = extend_return_value(m, Semi, np.array([0.3, 0.8]))
    assert ext.values.tolist() == pytest.approx([0.3, 0.8, 0.8, 0.0])
    ext = extend_return_value(m, Semi, np.array([1.0, 0.8]))
    assert ext[0] == 1.0


def test_option_json_round_trip(hardware, safe_return_bs):
    semi = build_safe_semi_mdp(hardware, safe_return_bs)
    o = next(o for o in semi.options.values() if o is not None)
    o2 = OptionPolicy.from_json(o.to_json())
    assert o2.dist == o.dist and np.array_equal(o2.rows, o.rows) and o2.expected_cost == o.expected_cost
