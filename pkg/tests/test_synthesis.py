import numpy as np
import pytest

from conftest import make_mdp, random_mdp
from oracles import dense_max_reach
from safereturn.errors import EmptyAmec, EmptyTarget, Infeasible
from safereturn.model import StationaryPolicy, induce_chain
from safereturn.product import Amec, Component
from safereturn.synthesis import (SafetyMode, co_optimize_prefix_suffix, evaluate_policy_reach, max_reach_lp,
                                  solve_constrained_prefix, solve_max_reachability, solve_suffix_average_cost)

GAMBLE = [(0, "a", 1, [(1, 0.3), (2, 0.7)]), (0, "b", 1, [(1, 0.5), (2, 0.5)]),
          (1, "s", 1, [(1, 1.0)]), (2, "s", 1, [(2, 1.0)])]


def component(m, states):
    states = np.asarray(states)
    rows = np.array([r for s in states for r in m.rows(int(s))])
    return Component(states, rows, 0)


def amec_of(m, groups):
    comps = tuple(component(m, g) for g in groups)
    union = np.zeros(m.n_states, dtype=bool)
    for c in comps:
        union[c.states] = True
    return Amec(comps, union)


def leaky_mdp(rng, n=20):
    """Every row leaks 0.1 into the two absorbing states n-2 (target) and n-1."""
    recs = []
    for x in range(n - 2):
        for a in range(int(rng.integers(1, 4))):
            ys = rng.choice(n - 2, size=3, replace=False)
            ps = 0.9 * rng.dirichlet(np.ones(3))
            recs.append((x, f"a{a}", 1.0, list(zip(ys.tolist(), ps.tolist())) + [(n - 2, 0.05), (n - 1, 0.05)]))
    recs += [(n - 2, "s", 1.0, [(n - 2, 1.0)]), (n - 1, "s", 1.0, [(n - 1, 1.0)])]
    return make_mdp(n, recs)


def hit_frequency(m, probs, target, runs, steps, rng):
    """Monte-Carlo frequency of ever hitting ``target`` from the initial state."""
    p = induce_chain(m, StationaryPolicy(probs)).trans.toarray()
    cum = np.cumsum(p, axis=1)
    s = np.full(runs, m.initial)
    hit = np.zeros(runs, dtype=bool)
    for _ in range(steps):
        hit |= target[s]
        u = rng.random(runs)
        s = np.minimum((u[:, None] > cum[s]).sum(axis=1), m.n_states - 1)
    return (hit | target[s]).mean()


def test_max_reach_initial_in_target():
    m = make_mdp(4, GAMBLE + [(3, "s", 1, [(3, 1.0)])], initial=1)
    _, v = solve_max_reachability(m, [1])
    assert v[m.initial] == 1.0


def test_max_reach_unreachable_target_is_zero():
    m = make_mdp(4, GAMBLE + [(3, "s", 1, [(3, 1.0)])])
    _, v = solve_max_reachability(m, [3])
    assert v[0] == 0.0


def test_max_reach_gamble():
    m = make_mdp(3, GAMBLE)
    pi, v = solve_max_reachability(m, [1])
    assert v[0] == pytest.approx(0.5, abs=1e-10)
    assert pi.action_dist(m, 0) == {"b": 1.0}


def test_max_reach_empty_target():
    with pytest.raises(EmptyTarget):
        solve_max_reachability(make_mdp(3, GAMBLE), [])


def test_values_stay_in_unit_interval_and_policy_attains_them():
    rng = np.random.default_rng(9)
    for _ in range(30):
        n = int(rng.integers(4, 25))
        m = random_mdp(rng, n)
        tgt = rng.random(n) < 0.2
        tgt[-1] = True
        pi, v = solve_max_reachability(m, tgt)
        assert np.all((v.values >= -1e-9) & (v.values <= 1 + 1e-9))
        assert np.allclose(v.values, dense_max_reach(m, tgt), atol=1e-8)
        assert np.allclose(evaluate_policy_reach(m, pi, tgt).values, v.values, atol=1e-8)
        assert max_reach_lp(m, tgt) == pytest.approx(v[0], abs=1e-6)


def test_walking_away_gives_zero():
    m = make_mdp(3, [(0, "l", 1, [(1, 1.0)]), (0, "r", 1, [(2, 1.0)]), (1, "s", 1, [(1, 1.0)]), (2, "s", 1, [(2, 1.0)])])
    pi = StationaryPolicy.from_mapping(m, {0: {"l": 1.0}})
    assert evaluate_policy_reach(m, pi, [2]).values.tolist() == [0.0, 0.0, 1.0]


def test_policy_evaluation_matches_monte_carlo():
    rng = np.random.default_rng(17)
    m = leaky_mdp(rng)
    probs = np.zeros(m.n_rows)
    for x in range(m.n_states):
        rows = list(m.rows(x))
        probs[rows] = rng.dirichlet(np.ones(len(rows)))
    tgt = np.zeros(m.n_states, dtype=bool)
    tgt[-2] = True
    v = evaluate_policy_reach(m, StationaryPolicy(probs), tgt)[0]
    runs = 100_000
    freq = hit_frequency(m, probs, tgt, runs, 400, np.random.default_rng(0))
    sigma = np.sqrt(v * (1 - v) / runs)
    assert abs(freq - v) <= 3 * sigma


def test_prefix_zero_bounds_always_feasible():
    rng = np.random.default_rng(3)
    m = leaky_mdp(rng)
    tgt = np.zeros(m.n_states, dtype=bool)
    tgt[-2] = True
    res = solve_constrained_prefix(m, tgt, np.ones(m.n_states), 0.0, 0.0)
    sums = np.add.reduceat(res.policy.probs, m.state_ptr[:-1])
    assert np.allclose(sums, 1.0)


def test_prefix_chi_o_above_optimum_is_infeasible():
    m = make_mdp(3, [(0, "a", 1, [(1, 0.9), (2, 0.1)]), (1, "s", 1, [(1, 1.0)]), (2, "s", 1, [(2, 1.0)])])
    with pytest.raises(Infeasible) as e:
        solve_constrained_prefix(m, [1], np.ones(3), 1.0, 0.0)
    assert e.value.bound == "chi_o"
    res = solve_constrained_prefix(m, [1], np.ones(3), 0.9, 0.0)
    assert res.reach == pytest.approx(0.9)


def test_prefix_initial_inside_task_set():
    m = make_mdp(3, GAMBLE)
    res = solve_constrained_prefix(m, [0, 1], np.ones(3), 1.0, 1.0)
    assert res.reach == 1.0 and res.entry == {0: 1.0}


def test_prefix_cumulative_constraint_and_entry_frequency():
    rng = np.random.default_rng(5)
    m = leaky_mdp(rng)
    tgt = np.zeros(m.n_states, dtype=bool)
    tgt[-2] = True
    v_ret = rng.uniform(0.5, 1.0, m.n_states)
    _, v = solve_max_reachability(m, tgt)
    chi_o = round(0.9 * v[0], 3)
    res = solve_constrained_prefix(m, tgt, v_ret, chi_o, 0.6, SafetyMode.CUMULATIVE)
    assert res.cumulative_safety >= 0.6 - 1e-9
    runs = 100_000
    freq = hit_frequency(m, res.policy.probs, tgt, runs, 400, np.random.default_rng(1))
    assert freq >= chi_o - 3 * np.sqrt(chi_o * (1 - chi_o) / runs)


def test_prefix_statewise_never_visits_forbidden_states():
    rng = np.random.default_rng(6)
    for _ in range(20):
        m = leaky_mdp(rng)
        tgt = np.zeros(m.n_states, dtype=bool)
        tgt[-2] = True
        v_ret = np.where(rng.random(m.n_states) < 0.3, 0.2, 1.0)
        v_ret[m.initial] = v_ret[-2] = 1.0
        try:
            res = solve_constrained_prefix(m, tgt, v_ret, 0.0, 0.9, SafetyMode.STATEWISE)
        except Infeasible:
            continue
        p = induce_chain(m, res.policy).trans.toarray()
        p[tgt] = 0.0
        seen = np.zeros(m.n_states, dtype=bool)
        frontier = np.zeros(m.n_states, dtype=bool)
        frontier[m.initial] = True
        while frontier.any():
            seen |= frontier
            frontier = (p[frontier].sum(axis=0) > 0) & ~seen
        assert np.all(v_ret[seen] >= 0.9)


def test_prefix_feasibility_is_monotone():
    rng = np.random.default_rng(12)
    grid = [0.0, 0.3, 0.6, 0.9]
    for _ in range(8):
        m = leaky_mdp(rng)
        tgt = np.zeros(m.n_states, dtype=bool)
        tgt[-2] = True
        v_ret = rng.uniform(0.0, 1.0, m.n_states)
        v_ret[m.initial] = 1.0
        for mode in SafetyMode:
            ok = {}
            for co in grid:
                for cr in grid:
                    try:
                        solve_constrained_prefix(m, tgt, v_ret, co, cr, mode)
                        ok[co, cr] = True
                    except Infeasible:
                        ok[co, cr] = False
            for (co, cr), f in ok.items():
                if f:
                    assert all(ok[a, b] for a in grid for b in grid if a <= co and b <= cr)


def test_suffix_single_state():
    m = make_mdp(1, [(0, "s", 3.0, [(0, 1.0)])])
    res = solve_suffix_average_cost(m, amec_of(m, [[0]]))
    assert res.gains.tolist() == [3.0]
    assert res.policy.probs.tolist() == [1.0]


def test_suffix_forced_alternation():
    m = make_mdp(2, [(0, "a", 1.0, [(1, 1.0)]), (1, "a", 5.0, [(0, 1.0)])])
    res = solve_suffix_average_cost(m, amec_of(m, [[0, 1]]))
    assert res.gains[0] == pytest.approx(3.0)


def cheap_cycle_model():
    # A=0, B=1, C=2 (the I-state); deterministic gains: A->B cycle 1.0, A->C cycle 10.0
    return make_mdp(3, [(0, "toB", 1.0, [(1, 1.0)]), (0, "toC", 10.0, [(2, 1.0)]),
                        (1, "back", 1.0, [(0, 1.0)]), (2, "back", 10.0, [(0, 1.0)])])


def test_suffix_gain_equals_cheap_cycle_and_blend_covers_all_states():
    m = cheap_cycle_model()
    res = solve_suffix_average_cost(m, amec_of(m, [[0, 1, 2]]), epsilon=0.05)
    assert res.gains[0] == pytest.approx(1.0)
    assert res.policy.action_dist(m, 0) == pytest.approx({"toB": 0.975, "toC": 0.025})
    p = induce_chain(m, res.policy).trans.toarray()
    cum = np.cumsum(p, axis=1)
    rng = np.random.default_rng(0)
    s = np.zeros(1000, dtype=int)
    visits = np.zeros(3)
    for _ in range(1000):
        s = np.minimum((rng.random(s.size)[:, None] > cum[s]).sum(axis=1), 2)
        visits += np.bincount(s, minlength=3)
    assert visits.sum() == 1_000_000
    assert visits[2] > 0


def test_suffix_blend_stays_inside_component():
    m = make_mdp(4, [(0, "in", 1.0, [(1, 0.5), (0, 0.5)]), (0, "out", 1.0, [(3, 1.0)]),
                     (1, "a", 2.0, [(2, 1.0)]), (2, "a", 1.0, [(0, 1.0)]), (3, "s", 1.0, [(3, 1.0)])])
    comp = Component(np.array([0, 1, 2]), np.array([0, 2, 3]), 0)
    amec = Amec((comp,), np.array([True, True, True, False]))
    res = solve_suffix_average_cost(m, amec)
    assert res.policy.probs[1] == 0.0
    probs = res.policy.probs.copy()
    probs[4] = 1.0
    p = induce_chain(m, StationaryPolicy(probs)).trans.toarray()
    rng = np.random.default_rng(1)
    cum = np.cumsum(p, axis=1)
    s = np.zeros(1000, dtype=int)
    for _ in range(1000):
        s = np.minimum((rng.random(s.size)[:, None] > cum[s]).sum(axis=1), 3)
        assert not (s == 3).any()


def test_suffix_requires_amec():
    m = make_mdp(1, [(0, "s", 1.0, [(0, 1.0)])])
    with pytest.raises(EmptyAmec):
        solve_suffix_average_cost(m, Amec((), np.zeros(1, dtype=bool)))


def test_co_optimize_single_amec():
    m = make_mdp(3, [(0, "go", 1.0, [(1, 1.0)]), (1, "a", 2.0, [(2, 1.0)]), (2, "a", 4.0, [(1, 1.0)])])
    out = co_optimize_prefix_suffix(m, amec_of(m, [[1, 2]]), 1.0, 0.0, np.ones(3))
    assert out.prefix.reach == pytest.approx(1.0)
    assert out.plan_cost == pytest.approx(3.0)


def two_route_model():
    # 0 start; 1 corridor with low return value; 2 cheap loop (cost 1); 3 safe hall; 4 expensive loop (cost 4)
    return make_mdp(5, [(0, "risky", 1.0, [(1, 1.0)]), (0, "safe", 1.0, [(3, 1.0)]),
                        (1, "a", 1.0, [(2, 1.0)]), (2, "loop", 1.0, [(2, 1.0)]),
                        (3, "a", 1.0, [(4, 1.0)]), (4, "loop", 4.0, [(4, 1.0)])])


def test_co_optimize_prefers_safe_amec_under_statewise_bound():
    m = two_route_model()
    amec = amec_of(m, [[2], [4]])
    v_ret = np.array([1.0, 0.2, 1.0, 1.0, 1.0])
    safe = co_optimize_prefix_suffix(m, amec, 1.0, 0.9, v_ret, SafetyMode.STATEWISE)
    assert safe.plan_cost == pytest.approx(4.0)
    assert safe.prefix.entry == pytest.approx({4: 1.0})
    free = co_optimize_prefix_suffix(m, amec, 1.0, 0.0, v_ret, SafetyMode.STATEWISE)
    assert free.plan_cost == pytest.approx(1.0)
    assert free.prefix.entry == pytest.approx({2: 1.0})


def test_mps_dump_sections():
    m = two_route_model()
    res = solve_constrained_prefix(m, [2, 4], np.ones(5), 1.0, 0.5, SafetyMode.CUMULATIVE)
    text = res.lp.to_mps()
    for key in ("NAME", "ROWS", "COLUMNS", "RHS", "ENDATA"):
        assert key in text
