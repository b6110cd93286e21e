"""Brute-force reference implementations used to cross-check the library.

Each oracle works on explicit configurations with a counter cap, so it is
slow but shares no code with the algorithms under test.
"""

from __future__ import annotations

import itertools
import math
import random
from collections import deque
from fractions import Fraction

import numpy as np

from pmcreach.model import Config, Pmc, Rule, all_subsets

INF = math.inf


# --- random instances ----------------------------------------------------------------

def random_pmc(rng: random.Random, n_states: int, d: int, n_rules: int, zero_rules: bool = True,
               max_weight: int = 4, deltas=(-1, 0, 1)) -> Pmc:
    """Random model; every state gets at least one rule for every zero-test set when ``zero_rules``."""
    states = tuple(f"s{k}" for k in range(n_states))
    rules = []
    for k in range(n_rules):
        src = states[k % n_states] if k < n_states else rng.choice(states)
        rules.append(Rule(src, tuple(rng.choice(deltas) for _ in range(d)), frozenset(), rng.randint(1, max_weight),
                          rng.choice(states)))
    if zero_rules:
        for q in states:
            for c in all_subsets(d)[1:]:
                for _ in range(rng.randint(1, 2)):
                    delta = tuple(rng.choice((0, 1)) if j + 1 in c else rng.choice(deltas) for j in range(d))
                    rules.append(Rule(q, delta, c, rng.randint(1, max_weight), rng.choice(states)))
    return Pmc(d, states, tuple(rules))


# --- least safe level (Case I) -------------------------------------------------------

def botfin_bruteforce(pmc: Pmc, component, i: int) -> dict:
    """Least j such that counter i cannot be driven from j to 0 using all-positive rules.

    Other counters are unconstrained, so only counter i is tracked.  A finite
    value never exceeds |C|, hence reaching zero from |C| + 1 means every
    level works and the answer is infinite.
    """
    n = len(component)
    out = {}
    for q in component:
        val = INF
        for j in range(1, n + 2):
            cap = j + 2 * n + 2
            seen = {(q, j)}
            todo = [(q, j)]
            hit = False
            while todo and not hit:
                s, v = todo.pop()
                for r in pmc.empty_rules(s):
                    w = v + r.delta[i - 1]
                    if w == 0:
                        hit = True
                        break
                    if w <= cap and (r.dst, w) not in seen:
                        seen.add((r.dst, w))
                        todo.append((r.dst, w))
            if not hit:
                val = j
                break
        out[q] = val
    return out


# --- least reward dip on a zero-to-zero return (Case II) -----------------------------

def botinf_bruteforce(b, q, k: int) -> float:
    """Least reward dip over first returns to q(0), by explicit search.

    A finite dip is attained below counter height 2|Q|^2, so a deeper dip
    once the height cap is doubled means the dip is unbounded.
    """
    H = 2 * len(b.states) ** 2 + 2
    low, high = _least_return(b, q, k, H), _least_return(b, q, k, 2 * H)
    if high < low:
        return INF
    if high == INF:
        return 0
    if high == -INF:
        return INF
    return max(0, -high)


def _least_return(b, q, k: int, H: int) -> float:
    """Bellman-Ford over explicit (state, counter <= H) configurations.

    The start q(0) is split into a source and a sink so that only first
    returns are counted.  A negative cycle that can still reach the sink
    gives -INF.
    """
    states = list(b.states)
    zero = {s: [] for s in states}
    pos = {s: [] for s in states}
    for r in b.rules:
        w = r.reward[k - 1] if b.reward_dim else 0
        if r.at_zero:
            if r.step >= 0:
                zero[r.src].append((r.step, r.dst, w))
        else:
            pos[r.src].append((r.step, r.dst, w))
    for s in states:
        zero[s] = zero[s] or [(0, s, 0)]
        pos[s] = pos[s] or [(0, s, 0)]
    SINK = ("sink",)
    edges = []
    for s in states:
        for c in range(H + 1):
            if (s, c) == (q, 0):
                continue
            for step, t, w in (zero[s] if c == 0 else pos[s]):
                c2 = c + step
                if c2 > H:
                    continue
                edges.append(((s, c), SINK if (t, c2) == (q, 0) else (t, c2), w))
    dist = {}
    for step, t, w in zero[q]:
        node = SINK if (t, step) == (q, 0) else (t, step)
        dist[node] = min(dist.get(node, INF), w)
    nodes = len(states) * (H + 1) + 1

    def relax():
        changed = False
        for u, v, w in edges:
            du = dist.get(u, INF)
            if du < INF and du + w < dist.get(v, INF):
                dist[v] = du + w
                changed = True
        return changed

    for _ in range(nodes):
        if not relax():
            break
    before = dist.get(SINK, INF)
    for _ in range(nodes + 1):
        relax()
    after = dist.get(SINK, INF)
    return -INF if after < before else after


# --- coverability by capped search ---------------------------------------------------

def capped_cover(vass, start_state, start, target_state, floor, cap: int) -> bool:
    """Breadth-first search over concrete VASS configurations with counters <= cap."""
    root = (start_state, tuple(start))
    seen = {root}
    todo = deque([root])
    while todo:
        s, vec = todo.popleft()
        if s == target_state and all(v >= f for v, f in zip(vec, floor)):
            return True
        for r in vass.out.get(s, ()):
            nv = tuple(v + x for v, x in zip(vec, r.delta))
            if any(v < 0 or v > cap for v in nv):
                continue
            if (r.dst, nv) not in seen:
                seen.add((r.dst, nv))
                todo.append((r.dst, nv))
    return False


# --- non-negative closed walks by enumeration ----------------------------------------

def cycle_enumeration(edges, strict, through, max_mult: int = 5) -> bool:
    """Search edge multiplicities 0..max_mult for a connected circulation through ``through``."""
    m = len(edges)
    if m == 0:
        return False
    d = len(edges[0][1])
    nodes = sorted({e[0] for e in edges} | {e[2] for e in edges}, key=repr)
    pos = {v: k for k, v in enumerate(nodes)}
    inc = np.zeros((len(nodes), m), dtype=np.int64)
    eff = np.zeros((d, m), dtype=np.int64)
    for k, (s, dl, t) in enumerate(edges):
        inc[pos[s], k] -= 1
        inc[pos[t], k] += 1
        eff[:, k] = dl
    grid = np.array(list(itertools.product(range(max_mult + 1), repeat=m)), dtype=np.int64)[1:]
    ok = np.all(grid @ inc.T == 0, axis=1)
    total = grid @ eff.T
    ok &= np.all(total >= 0, axis=1)
    for j in strict:
        ok &= total[:, j - 1] > 0
    for row in grid[ok]:
        support = [k for k in range(m) if row[k] > 0]
        verts = {edges[k][0] for k in support} | {edges[k][2] for k in support}
        if through not in verts:
            continue
        # weak connectivity of the support
        adj = {v: set() for v in verts}
        for k in support:
            adj[edges[k][0]].add(edges[k][2])
            adj[edges[k][2]].add(edges[k][0])
        seen, todo = {through}, [through]
        while todo:
            v = todo.pop()
            for w in adj[v] - seen:
                seen.add(w)
                todo.append(w)
        if seen == verts:
            return True
    return False


# --- exact one-step expectations -----------------------------------------------------

def one_step(pmc: Pmc, cfg: Config):
    """(probability, rule, successor) triples with exact rational probabilities."""
    zs = frozenset(k + 1 for k, v in enumerate(cfg.counters) if v == 0)
    rs = [r for r in pmc.rules_for(cfg.state, zs) if all(cfg.counters[k] + r.delta[k] >= 0 for k in range(pmc.dimension))]
    if not rs:
        return [(Fraction(1), None, cfg)]
    tot = sum(r.weight for r in rs)
    return [(Fraction(r.weight, tot), r, Config(r.dst, tuple(a + b for a, b in zip(cfg.counters, r.delta))))
            for r in rs]


# --- one-step drift of the potential ---------------------------------------------------

def martingale_drift(b, data, levels: int = 20) -> float:
    """Largest |E[m'] - m| over D at counter 0 and excursion states at 1..levels.

    Probabilities are exact fractions taken straight from the rules, with the
    same padding loops as the one-counter semantics.
    """
    idx = b.index
    zero, pos = {s: [] for s in b.states}, {s: [] for s in b.states}
    for r in b.rules:
        if r.at_zero and r.step >= 0:
            zero[r.src].append(r)
        elif not r.at_zero:
            pos[r.src].append(r)
    gs = [data.g(n) for n in range(levels + 2)]
    S = {b.states[k] for k in data.S}
    worst = 0.0
    for n in range(levels + 1):
        for p in (data.D if n == 0 else S):
            rules = (zero if n == 0 else pos)[p]
            if rules:
                tot = sum(r.weight for r in rules)
                moves = [(Fraction(r.weight, tot), r.reward[0], n + r.step, r.dst) for r in rules]
            else:
                moves = [(Fraction(1), 0, n, p)]
            expect = sum(float(pr) * (rw - data.t + gs[lv][idx[dst]]) for pr, rw, lv, dst in moves)
            worst = max(worst, abs(expect - gs[n][idx[p]]))
    return worst


def random_martingale_instances(rng: random.Random, count: int, max_states: int = 4):
    """Yield (abstraction, MartingaleData) for random bottom components with finite return times."""
    from pmcreach.case2 import build_x_chain, project_counter, solve_g_matrix, step_matrices
    from pmcreach.chain import scc_decomposition
    from pmcreach.martingale import martingale_data
    from pmcreach.model import PreconditionViolated

    made = 0
    while made < count:
        n = rng.randint(1, max_states)
        b = project_counter(random_pmc(rng, n, 2, rng.randint(n, 2 * n + 3)), 2)
        sm = step_matrices(b)
        g = solve_g_matrix(sm)
        x = build_x_chain(sm, g)
        for comp in scc_decomposition(x.chain).bottoms():
            D = [x.chain.nodes[k] for k in comp]
            if any(isinstance(q, tuple) for q in D):
                continue
            try:
                data = martingale_data(b, D, g=g)
            except PreconditionViolated:
                continue  # escape to infinity or infinite return time
            made += 1
            yield b, data
            if made == count:
                return
