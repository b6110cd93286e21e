"""Coverability primitives on plain vector addition systems with states.

* ``to_blocking_vass`` turns the all-positive dynamics of a pMC into a VASS in
  which a zero counter stops all progress.
* ``karp_miller_cover_above`` decides whether a state can be reached with
  counters at least a given floor, where a floor entry ``OMEGA`` asks for
  arbitrarily large values.  Positive answers come with a concrete path.
* ``nonneg_cycle_exists`` decides, by linear programming with exactly
  verified rational solutions, whether a strongly connected rule graph has a
  closed walk through a given state whose total effect is non-negative and
  strictly positive on chosen coordinates.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Sequence

import numpy as np
from scipy.optimize import linprog

from .chain import tarjan
from .model import Pmc, ResourceExhausted

OMEGA = math.inf


@dataclass(frozen=True)
class VassRule:
    src: Hashable
    delta: tuple[int, ...]
    dst: Hashable
    tag: object = None


@dataclass
class Vass:
    dimension: int
    states: list
    rules: list[VassRule]

    def __post_init__(self):
        self.out: dict = {}
        for r in self.rules:
            if len(r.delta) != self.dimension:
                raise ValueError("VASS rule delta has the wrong length")
            self.out.setdefault(r.src, []).append(r)


def to_blocking_vass(pmc: Pmc) -> Vass:
    """Each all-positive rule p -a-> q becomes p -(-1..)-> p' -(+1..)-> p'' -a-> q."""
    d = pmc.dimension
    down, up = (-1,) * d, (1,) * d
    states = list(pmc.states)
    rules = []
    for k, r in enumerate(pmc.rules):
        if r.zero_test:
            continue
        a, b = ("blk", k, 1), ("blk", k, 2)
        states += [a, b]
        rules += [VassRule(r.src, down, a, (r, 0)), VassRule(a, up, b, (r, 1)), VassRule(b, r.delta, r.dst, (r, 2))]
    return Vass(d, states, rules)


@dataclass
class _Node:
    state: Hashable
    vec: tuple
    parent: "_Node | None"
    rule: VassRule | None
    depth: int
    accel: list = field(default_factory=list)  # ancestors used for acceleration


@dataclass
class CoverResult:
    found: bool
    nodes: int
    path: list[VassRule] | None = None  # concrete rule sequence
    configs: list[tuple] | None = None  # (state, counters) along the concrete path

    def __bool__(self):
        return self.found


def _meets(vec, floor) -> bool:
    for v, f in zip(vec, floor):
        if f == OMEGA:
            if v != OMEGA:
                return False
        elif v < f:
            return False
    return True


def karp_miller_cover_above(vass: Vass, start_state, start: Sequence[int], target_state, floor: Sequence,
                            node_budget: int = 200_000, witness: bool = True,
                            pump_to: int | None = None) -> CoverResult:
    """Breadth-first Karp–Miller search for ``target_state`` with counters above ``floor``."""
    d = vass.dimension
    floor = tuple(floor)
    root = _Node(start_state, tuple(start), None, None, 0)
    queue = deque([root])
    seen: dict = {start_state: [root.vec]}
    count = 1
    while queue:
        node = queue.popleft()
        if node.state == target_state and _meets(node.vec, floor):
            res = CoverResult(True, count)
            if witness:
                finite = [f for f in floor if f != OMEGA]
                goal = pump_to if pump_to is not None else max([2] + [int(f) + 1 for f in finite])
                concrete = tuple(goal if f == OMEGA else f for f in floor)
                res.path, res.configs = _concretize(node, concrete, vass, start_state, tuple(start))
            return res
        for r in vass.out.get(node.state, ()):
            vec = tuple(v + x for v, x in zip(node.vec, r.delta))
            if any(v < 0 for v in vec):
                continue
            child = _Node(r.dst, vec, node, r, node.depth + 1)
            anc = node
            stop = False
            cur = list(vec)
            while anc is not None:
                if anc.state == r.dst:
                    if tuple(cur) == anc.vec:
                        stop = True
                        break
                    if all(a <= c for a, c in zip(anc.vec, cur)) and any(a < c for a, c in zip(anc.vec, cur)):
                        grown = [k for k in range(d) if anc.vec[k] < cur[k] and cur[k] != OMEGA]
                        if grown:
                            child.accel.append(anc)
                            for k in grown:
                                cur[k] = OMEGA
                anc = anc.parent
            child.vec = tuple(cur)
            if stop:
                continue
            prior = seen.setdefault(child.state, [])
            if any(all(p >= c for p, c in zip(pv, child.vec)) for pv in prior):
                continue
            prior.append(child.vec)
            count += 1
            if count > node_budget:
                raise ResourceExhausted("Karp–Miller node budget exhausted", nodes=count)
            queue.append(child)
    return CoverResult(False, count)


def _concretize(node: _Node, goal: tuple, vass: Vass, start_state, start: tuple):
    chain = []
    n = node
    while n is not None:
        chain.append(n)
        n = n.parent
    chain.reverse()
    pos = {id(n): k for k, n in enumerate(chain)}
    n_acc = sum(len(n.accel) for n in chain)
    for base in (2, 4, 16, 64, 256):
        for geometric in (False, True):
            seq = _pumped_sequence(chain, pos, base, n_acc if geometric else 0)
            configs = _replay(seq, start_state, start)
            if configs is not None and all(v >= g for v, g in zip(configs[-1][1], goal)):
                return seq, configs
    seq = _concrete_search(vass, start_state, start, node.state, goal)
    if seq is None:
        raise ResourceExhausted("could not pump a concrete covering witness")
    return seq, _replay(seq, start_state, start)


def _pumped_sequence(chain, pos, base: int, n_acc: int) -> list:
    seqs: list[list[VassRule]] = [[]]
    marks = [0]
    seen = 0
    for k in range(1, len(chain)):
        s = seqs[-1] + [chain[k].rule]
        for anc in chain[k].accel:
            seen += 1
            reps = base ** (n_acc - seen + 1) if n_acc else base
            if len(s) * reps > 2_000_000:
                return []
            loop = s[marks[pos[id(anc)]]:]
            s = s + loop * reps
        seqs.append(s)
        marks.append(len(s))
    return seqs[-1]


def _replay(seq, start_state, start):
    vec = list(start)
    state = start_state
    configs = [(state, tuple(vec))]
    for r in seq:
        if r.src != state:
            return None
        vec = [v + x for v, x in zip(vec, r.delta)]
        if any(v < 0 for v in vec):
            return None
        state = r.dst
        configs.append((state, tuple(vec)))
    return configs


def _concrete_search(vass: Vass, start_state, start, target_state, goal, budget: int = 200_000):
    """Breadth-first search over concrete configurations with counters capped."""
    cap = max(goal, default=0) + 4 * max(1, len(vass.states))
    root = (start_state, tuple(start))
    parent = {root: None}
    queue = deque([root])
    while queue:
        cfg = queue.popleft()
        if cfg[0] == target_state and all(v >= g for v, g in zip(cfg[1], goal)):
            seq = []
            while parent[cfg] is not None:
                prev, r = parent[cfg]
                seq.append(r)
                cfg = prev
            return seq[::-1]
        for r in vass.out.get(cfg[0], ()):
            vec = tuple(v + x for v, x in zip(cfg[1], r.delta))
            if any(v < 0 or v > cap for v in vec):
                continue
            nxt = (r.dst, vec)
            if nxt not in parent:
                parent[nxt] = (cfg, r)
                if len(parent) > budget:
                    return None
                queue.append(nxt)
    return None


# --- non-negative cycles ---------------------------------------------------------

@dataclass
class CycleResult:
    exists: bool
    flow: dict[int, Fraction] | None = None  # edge index -> flow
    delta: tuple[Fraction, ...] | None = None

    def __bool__(self):
        return self.exists


def _circulation_lp(edges, idx, d, strict, objective):
    """LP over edge flows restricted to ``idx``, solved to an exact fraction vector.

    objective "support": maximise sum of s_e with s_e <= f_e, s_e <= 1 and total
    effect >= 0.  objective "strict": with sum f = 1 maximise lam <= 1 subject to
    effect >= 0 and effect_j >= lam for j in ``strict``, lam in [0, 1].
    """
    m = len(idx)
    nodes = sorted({edges[e][0] for e in idx} | {edges[e][2] for e in idx}, key=repr)
    if objective == "support":
        nv = 2 * m
    else:
        nv = m + 1
    a_eq, b_eq, a_ub, b_ub = [], [], [], []
    for v in nodes:
        row = [0] * nv
        for k, e in enumerate(idx):
            s, _, t = edges[e]
            if s == v:
                row[k] -= 1
            if t == v:
                row[k] += 1
        a_eq.append(row)
        b_eq.append(0)
    for j in range(d):
        row = [0] * nv
        for k, e in enumerate(idx):
            row[k] = -edges[e][1][j]
        if objective == "strict" and j in strict:
            row[m] = 1
        a_ub.append(row)
        b_ub.append(0)
    if objective == "support":
        for k in range(m):
            row = [0] * nv
            row[m + k] = 1
            row[k] = -1
            a_ub.append(row)
            b_ub.append(0)
        bounds = [(0, None)] * m + [(0, 1)] * m
        c = [0] * m + [-1] * m
    else:
        a_eq.append([1] * m + [0])
        b_eq.append(1)
        bounds = [(0, None)] * m + [(0, 1)]
        c = [0] * m + [-1]
    return _exact_lp(c, a_ub, b_ub, a_eq, b_eq, bounds)


def _exact_lp(c, a_ub, b_ub, a_eq, b_eq, bounds):
    """Solve in floating point, then round to small fractions and check exactly.

    Vertices of these integer programs have small denominators, so rounding
    recovers them; a point that fails the exact check is never returned.
    """
    res = linprog(c, A_ub=np.array(a_ub, dtype=float), b_ub=b_ub, A_eq=np.array(a_eq, dtype=float), b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise ResourceExhausted(f"LP solver failed: {res.message}")
    for den in (10**3, 10**6, 10**9):
        x = [Fraction(v).limit_denominator(den) for v in res.x]
        x = [min(max(v, Fraction(lo or 0)), Fraction(hi)) if hi is not None else max(v, Fraction(lo or 0))
             for v, (lo, hi) in zip(x, bounds)]
        if (all(sum(a * v for a, v in zip(row, x)) <= b for row, b in zip(a_ub, b_ub))
                and all(sum(a * v for a, v in zip(row, x)) == b for row, b in zip(a_eq, b_eq))):
            return x
    raise ResourceExhausted("LP solution could not be verified in exact arithmetic")


def nonneg_cycle_exists(edges: Sequence[tuple], strict, through=None, dimension: int | None = None) -> CycleResult:
    """Closed walk with effect >= 0 everywhere and > 0 on ``strict`` (1-based).

    ``edges`` is a list of (src, delta, dst).  When ``through`` is given the walk
    must visit that state; otherwise any state will do.
    """
    if dimension is None:
        dimension = len(edges[0][1]) if edges else 0
    d = dimension
    strict0 = {j - 1 for j in strict}
    if through is None:
        starts = sorted({e[0] for e in edges}, key=repr)
        for q in starts:
            res = nonneg_cycle_exists(edges, strict, q, d)
            if res:
                return res
        return CycleResult(False)
    idx = [k for k in range(len(edges))]
    base = None
    while True:
        idx = _component_through(edges, idx, through)
        if not idx:
            return CycleResult(False)
        sol = _circulation_lp(edges, idx, d, strict0, "support")
        if sol is None:
            return CycleResult(False)
        m = len(idx)
        support = [idx[k] for k in range(m) if sol[k] > 0]
        if not support:
            return CycleResult(False)
        comp = _component_through(edges, support, through)
        if len(comp) == len(idx) and len(support) == len(idx):
            base = {idx[k]: sol[k] for k in range(m)}
            break
        idx = comp
    flow = dict(base)
    if strict0:
        sol = _circulation_lp(edges, idx, d, strict0, "strict")
        if sol is None or sol[-1] <= 0:
            return CycleResult(False)
        for k, e in enumerate(idx):
            flow[e] = flow[e] + sol[k]
    scale = sum(flow.values())
    if scale < 1:
        flow = {e: f / scale for e, f in flow.items()}
    eff = tuple(sum(f * edges[e][1][j] for e, f in flow.items()) for j in range(d))
    return CycleResult(True, flow, eff)


def _component_through(edges, idx, q) -> list[int]:
    """Edges of ``idx`` lying inside the strongly connected component of ``q``."""
    verts = sorted({edges[e][0] for e in idx} | {edges[e][2] for e in idx}, key=repr)
    if q not in verts:
        return []
    vpos = {v: k for k, v in enumerate(verts)}
    succ: list[list[int]] = [[] for _ in verts]
    for e in idx:
        succ[vpos[edges[e][0]]].append(vpos[edges[e][2]])
    comps = tarjan(len(verts), lambda v: succ[v])
    mine = next(c for c in comps if vpos[q] in c)
    inside = set(mine)
    return [e for e in idx if vpos[edges[e][0]] in inside and vpos[edges[e][2]] in inside]


def decompose_cycles(edges, flow: dict[int, Fraction]) -> list[list[int]]:
    """Split an integer-scaled circulation into simple cycles (edge index lists)."""
    from math import lcm

    den = 1
    for f in flow.values():
        den = lcm(den, f.denominator)
    left = {e: int(f * den) for e, f in flow.items() if f > 0}
    cycles = []
    while left:
        e0 = next(iter(left))
        walk, at, used = [], edges[e0][0], {}
        while at not in used:
            used[at] = len(walk)
            e = next(e for e in left if edges[e][0] == at)
            walk.append(e)
            at = edges[e][2]
        cyc = walk[used[at]:]
        k = min(left[e] for e in cyc)
        for e in cyc:
            left[e] -= k
            if left[e] == 0:
                del left[e]
        cycles.extend([cyc] * k)
    return cycles
