"""Independent brute-force oracles shared by the module and acceptance tests."""

from itertools import combinations

import numpy as np

from conftest import make_mdp
from safereturn.automata import Dra
from safereturn.product import build_product


def random_product(rng, max_model=4, ap=("a", "b")):
    n = int(rng.integers(2, max_model + 1))
    recs = []
    for x in range(n):
        for u in range(int(rng.integers(1, 3))):
            k = int(rng.integers(1, n + 1))
            ys = rng.choice(n, size=k, replace=False)
            recs.append((x, f"u{u}", 1.0, list(zip(ys.tolist(), rng.dirichlet(np.ones(k)).tolist()))))
    labels = [[a for a in ap if rng.random() < 0.5] for _ in range(n)]
    m = make_mdp(n, recs, labels, ap=list(ap))
    nq = 2
    delta = rng.integers(0, nq, size=(nq, 1 << len(ap)))
    pairs = []
    for _ in range(int(rng.integers(1, 4))):
        h = [q for q in range(nq) if rng.random() < 0.3]
        i = [q for q in range(nq) if rng.random() < 0.6]
        pairs.append((h, i))
    return build_product(m, Dra(tuple(ap), delta, 0, pairs))


def is_end_component(p, states):
    inside = np.zeros(p.n_states, dtype=bool)
    inside[list(states)] = True
    adj = {s: set() for s in states}
    for s in states:
        ok = False
        for r in p.rows(s):
            ys, _ = p.successors(r)
            if inside[ys].all():
                ok = True
                adj[s].update(int(y) for y in ys)
        if not ok:
            return False
    start = next(iter(states))
    for graph in (adj, {s: {t for t in states if s in adj[t]} for s in states}):
        seen, stack = {start}, [start]
        while stack:
            for t in graph[stack.pop()]:
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        if len(seen) != len(states):
            return False
    return True


def brute_force_accepting_union(p):
    """Union of every accepting end component, by subset enumeration."""
    rej = p.rejecting if p.rejecting is not None else np.zeros(p.n_states, dtype=bool)
    out = np.zeros(p.n_states, dtype=bool)
    for k in range(1, p.n_states + 1):
        for sub in combinations(range(p.n_states), k):
            idx = list(sub)
            if rej[idx].any() or not is_end_component(p, sub):
                continue
            if any(not h[idx].any() and i[idx].any() for h, i in zip(p.h_masks, p.i_masks)):
                out[idx] = True
    return out


def dense_max_reach(p, target, sweeps=20000):
    """Jacobi max-reach iteration on dense rows."""
    target = np.asarray(target, dtype=bool)
    rows = [(int(p.row_state[r]), p.trans[r].toarray().ravel()) for r in range(p.n_rows)]
    v = target.astype(float)
    for _ in range(sweeps):
        best = np.zeros(p.n_states)
        for x, pr in rows:
            best[x] = max(best[x], pr @ v)
        new = np.where(target, 1.0, best)
        if np.max(np.abs(new - v)) < 1e-14:
            return new
        v = new
    return v
