"""Stopping on any zero counter: qualitative decision and approximation.

While every counter is positive only rules with an empty zero test can fire,
so the control state follows a finite chain (the *floor chain*).  Inside a
bottom component of that chain each counter drifts with a rational *trend*;
counters with positive trend, or zero trend and a bounded dip, are the ones
that can escape to infinity.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .chain import (DEFAULT_EXACT_CAP, FiniteChain, absorption_values, scc_decomposition,
                    stationary_distribution)
from .coverability import OMEGA, decompose_cycles, karp_miller_cover_above, nonneg_cycle_exists, to_blocking_vass
from .model import (Config, Pmc, PreconditionViolated, ResourceExhausted, forget_counter, is_safe_prefix,
                    make_config, z_all, zero_set)

INF = math.inf
DEFAULT_NODE_CAP = 400_000


@dataclass
class FloorChain:
    chain: FiniteChain
    rule_probs: dict  # state -> list of (Rule or None, Fraction); None marks the padding loop
    padded: frozenset

    def edges(self, component, dimension: int) -> list[tuple]:
        """Rule multigraph of a component as (src, delta, dst) triples."""
        out = []
        for q in component:
            for r, _ in self.rule_probs[q]:
                if r is None:
                    out.append((q, (0,) * dimension, q))
                else:
                    out.append((q, r.delta, r.dst))
        return out


def build_floor_chain(pmc: Pmc) -> FloorChain:
    probs, trans, padded = {}, {}, set()
    for q in pmc.states:
        rs = pmc.empty_rules(q)
        if not rs:
            probs[q] = [(None, Fraction(1))]
            trans[q] = [(q, Fraction(1))]
            padded.add(q)
            continue
        tot = sum(r.weight for r in rs)
        probs[q] = [(r, Fraction(r.weight, tot)) for r in rs]
        trans[q] = [(r.dst, Fraction(r.weight, tot)) for r in rs]
    return FloorChain(FiniteChain.from_mapping(trans, nodes=list(pmc.states)), probs, frozenset(padded))


def bottom_components(floor: FloorChain) -> list[tuple]:
    dec = scc_decomposition(floor.chain)
    nodes = floor.chain.nodes
    return [tuple(nodes[k] for k in comp) for comp in dec.bottoms()]


@dataclass
class BsccAnalysis:
    component: tuple
    change: dict
    mu: dict
    trend: tuple
    botfin: dict = field(default_factory=dict)  # counter (1-based) -> {state: int or INF}
    diverging: tuple = ()

    @property
    def all_diverging(self) -> bool:
        return bool(self.diverging) and all(self.diverging)


def bscc_trend(pmc: Pmc, component, floor: FloorChain | None = None) -> BsccAnalysis:
    floor = floor or build_floor_chain(pmc)
    d = pmc.dimension
    idx = [floor.chain.index[q] for q in component]
    mu_idx = stationary_distribution(floor.chain, idx)
    mu = {floor.chain.nodes[k]: v for k, v in mu_idx.items()}
    change = {}
    for q in component:
        ch = [Fraction(0)] * d
        for r, p in floor.rule_probs[q]:
            if r is not None:
                for j in range(d):
                    ch[j] += p * r.delta[j]
        change[q] = tuple(ch)
    trend = tuple(sum(mu[q] * change[q][j] for q in component) for j in range(d))
    return BsccAnalysis(tuple(component), change, mu, trend)


def botfin(pmc: Pmc, component, i: int, floor: FloorChain | None = None) -> dict:
    """Least counter-i level from which no all-positive path reaches counter-i zero.

    With the other counters large, counter i follows the weighted graph of the
    component.  A cycle of negative weight lets it reach zero from any level
    (value INF); otherwise the deepest dip from q is the most negative
    shortest-path distance, and the answer is one more than its magnitude.
    """
    floor = floor or build_floor_chain(pmc)
    comp = list(component)
    pos = {q: k for k, q in enumerate(comp)}
    n = len(comp)
    edges = [(pos[s], dl[i - 1], pos[t]) for s, dl, t in floor.edges(comp, pmc.dimension)]
    # Bellman-Ford from a virtual source connected to every node with weight 0
    dist = [0] * n
    for _ in range(n):
        changed = False
        for s, w, t in edges:
            if dist[s] + w < dist[t]:
                dist[t] = dist[s] + w
                changed = True
        if not changed:
            break
    else:
        if any(dist[s] + w < dist[t] for s, w, t in edges):
            return {q: INF for q in comp}
    out = {}
    for q in comp:
        best = [INF] * n
        best[pos[q]] = 0
        for _ in range(n - 1):
            for s, w, t in edges:
                if best[s] + w < best[t]:
                    best[t] = best[s] + w
        out[q] = 1 - int(min(best))
    return out


def classify_divergence(an: BsccAnalysis) -> tuple[bool, ...]:
    flags = []
    for j, t in enumerate(an.trend):
        if t > 0:
            flags.append(True)
        elif t < 0:
            flags.append(False)
        else:
            table = an.botfin.get(j + 1, {})
            flags.append(bool(table) and all(v != INF for v in table.values()))
    return tuple(flags)


def analyze_bscc(pmc: Pmc, component, floor: FloorChain | None = None) -> BsccAnalysis:
    floor = floor or build_floor_chain(pmc)
    an = bscc_trend(pmc, component, floor)
    for j in range(1, pmc.dimension + 1):
        an.botfin[j] = botfin(pmc, component, j, floor)
    an.diverging = classify_divergence(an)
    return an


def escape_bound(pmc: Pmc, n: int):
    """(1 - p_min^|Q|)^floor(n/|Q|): chance of n steps outside the bottom components."""
    nq = len(pmc.states)
    e = n // nq
    p = pmc.min_probability ** nq
    if e <= 256:
        return (1 - p) ** e
    return math.exp(e * math.log1p(-float(p)))


def escape_horizon(pmc: Pmc, eps: float) -> float:
    """Smallest n with escape_bound(pmc, n) <= eps (may be infinite in floats)."""
    nq = len(pmc.states)
    p = float(pmc.min_probability) ** nq
    if eps >= 1:
        return 0
    if p == 0.0:
        return INF
    if p >= 1.0:
        return nq
    return math.ceil(math.log(eps) / math.log1p(-p)) * nq


@dataclass(frozen=True)
class DivergenceConstants:
    delta: Fraction
    a: float
    threshold: Fraction
    K: int
    trend: Fraction
    x_min: Fraction


def divergence_constants(onedim: Pmc, component, eps: float, floor: FloorChain | None = None) -> DivergenceConstants:
    if onedim.dimension != 1:
        raise PreconditionViolated("divergence constants are defined for one counter")
    floor = floor or build_floor_chain(onedim)
    an = bscc_trend(onedim, component, floor)
    t = an.trend[0]
    if t <= 0:
        raise PreconditionViolated("divergence constants need a positive trend")
    x_min = min(p for q in component for _, p in floor.rule_probs[q])
    n = len(component)
    delta = Fraction(2 * n) / x_min**n
    a = math.exp(-float(t) ** 2 / (8 * float(delta + t + 1) ** 2))
    threshold = 2 * delta / t
    bound = math.log(1 / eps) / ((1 - a) * math.log(1 / a))
    K = max(math.ceil(bound) + 1, math.floor(threshold) + 1)
    return DivergenceConstants(delta, a, threshold, K, t, x_min)


def onedim_view(pmc: Pmc, j: int) -> Pmc:
    """Keep only counter j (1-based) by forgetting every other counter."""
    cur, keep = pmc, j
    for k in range(pmc.dimension, 0, -1):
        if k == j:
            continue
        cur = forget_counter(cur, k)
        if k < keep:
            keep -= 1
    return cur


def _tilted(pmc: Pmc, component, j: int, floor: FloorChain):
    n = len(component)
    pos = {q: k for k, q in enumerate(component)}
    down, same, up = np.zeros((n, n)), np.zeros((n, n)), np.zeros((n, n))
    for q in component:
        for r, p in floor.rule_probs[q]:
            dst = q if r is None else r.dst
            step = 0 if r is None else r.delta[j - 1]
            (down if step < 0 else up if step > 0 else same)[pos[q], pos[dst]] += float(p)
    return down, same, up


def _perron(m: np.ndarray) -> tuple[float, np.ndarray]:
    w, v = np.linalg.eig(m)
    k = int(np.argmax(w.real))
    vec = np.abs(v[:, k].real)
    return float(w[k].real), vec


def decay_certificate(pmc: Pmc, component, j: int, floor: FloorChain | None = None):
    """Exponential supermartingale z^x * v[q] for counter j inside a component.

    Returns (z, ratio) such that from q with counter j = k the probability of
    ever driving counter j to zero (others positive) is at most ratio * z^k, or
    None when no certificate with z < 1 exists.  z = 0 means the counter can
    never decrease.
    """
    floor = floor or build_floor_chain(pmc)
    down, same, up = _tilted(pmc, component, j, floor)
    if not down.any():
        return 0.0, 1.0

    def rho(z):
        return _perron(down / z + same + up * z)[0]

    lo, hi = math.log(1e-9), 0.0
    for _ in range(200):  # golden-section minimisation of a log-convex function
        m1, m2 = lo + (hi - lo) * 0.382, lo + (hi - lo) * 0.618
        if rho(math.exp(m1)) < rho(math.exp(m2)):
            hi = m2
        else:
            lo = m1
    zstar = math.exp((lo + hi) / 2)
    if rho(zstar) >= 1 - 1e-9:
        return None
    a, b = 1e-12, zstar
    for _ in range(200):
        mid = (a + b) / 2
        if rho(mid) <= 1 - 1e-10:
            b = mid
        else:
            a = mid
    z = b
    m = down / z + same + up * z
    r, v = _perron(m)
    if v.min() <= 0 or np.any(m @ v > v * (1 + 1e-9)):
        return None
    return z, float(v.max() / v.min())


_UNSET = object()


def truncation_level(pmc: Pmc, component, j: int, budget: float, floor: FloorChain | None = None,
                     cert=_UNSET) -> dict:
    """Counter-j level past which reaching zero has probability <= budget.

    ``cert`` may pass a precomputed ``decay_certificate`` result.
    """
    floor = floor or build_floor_chain(pmc)
    info: dict = {}
    one = onedim_view(pmc, j)
    try:
        dc = divergence_constants(one, component, budget)
        info.update(delta=dc.delta, a=dc.a, threshold=dc.threshold, K_trend=dc.K)
    except PreconditionViolated:
        dc = None
    if cert is _UNSET:
        cert = decay_certificate(pmc, component, j, floor)
    k_cert = None
    if cert is not None:
        z, ratio = cert
        info.update(z=z, ratio=ratio)
        if z == 0.0:
            k_cert = 1
        else:
            k_cert = max(1, math.ceil(math.log(budget / (2 * ratio)) / math.log(z)))
        info["K_cert"] = k_cert
    choices = [k for k in (k_cert, dc.K if dc else None) if k is not None]
    if not choices:
        raise PreconditionViolated(f"counter {j} has no positive trend in this component")
    info["K"] = min(choices)
    return info


# --- qualitative decision ---------------------------------------------------------

@dataclass
class Case1Qualitative:
    almost_sure: bool
    witness: dict | None = None
    analyses: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "almost_sure" if self.almost_sure else "not_almost_sure"


class _ModelInfo:
    def __init__(self, pmc: Pmc):
        self.floor = build_floor_chain(pmc)
        self.bottoms = bottom_components(self.floor)
        self.analysis = {}
        self.of_state = {}
        for comp in self.bottoms:
            an = analyze_bscc(pmc, comp, self.floor)
            self.analysis[comp] = an
            for q in comp:
                self.of_state[q] = an


_INFO_CACHE: dict = {}


def model_info(pmc: Pmc) -> _ModelInfo:
    got = _INFO_CACHE.get(pmc)
    if got is None:
        if len(_INFO_CACHE) > 256:
            _INFO_CACHE.clear()
        got = _INFO_CACHE[pmc] = _ModelInfo(pmc)
    return got


def qualitative_case1(pmc: Pmc, start: Config, node_budget: int = 200_000) -> Case1Qualitative:
    start = make_config(*start)
    info = model_info(pmc)
    res = Case1Qualitative(True, analyses=list(info.analysis.values()))
    res.diagnostics["padded_states"] = sorted(map(str, info.floor.padded))
    res.diagnostics["threshold"] = "omega-coverage in place of the explicit Rosier-Yen constant"
    if zero_set(start):
        res.diagnostics["stopped_at_start"] = True
        return res
    d = pmc.dimension
    vass = None
    for comp in info.bottoms:
        an = info.analysis[comp]
        if not an.all_diverging:
            continue
        edges = info.floor.edges(comp, d)
        strict = {j + 1 for j in range(d) if an.trend[j] > 0}
        for q in comp:
            cyc = nonneg_cycle_exists(edges, strict, through=q, dimension=d)
            if not cyc:
                continue
            floor_vec = tuple(OMEGA if an.trend[j] > 0 else max(1, an.botfin[j + 1][q]) for j in range(d))
            vass = vass or to_blocking_vass(pmc)
            cycle_len = sum(len(c) for c in decompose_cycles(edges, cyc.flow))
            cov = karp_miller_cover_above(vass, start.state, start.counters, q, floor_vec,
                                          node_budget=node_budget, pump_to=max(2, min(64, cycle_len + 1)))
            if not cov:
                continue
            path = _lift_path(pmc, start, cov.path)
            res.almost_sure = False
            res.witness = {
                "component": list(comp),
                "state": q,
                "trend": list(an.trend),
                "cycle_flow": {f"{edges[e][0]}->{edges[e][2]}#{e}": f for e, f in cyc.flow.items()},
                "cycle_effect": list(cyc.delta),
                "floor": ["omega" if f == OMEGA else f for f in floor_vec],
                "path": [[c.state, list(c.counters)] for c in path],
            }
            return res
    return res


def _lift_path(pmc: Pmc, start: Config, vass_path) -> list[Config]:
    path = [start]
    cur = start
    for vr in vass_path:
        rule, phase = vr.tag
        if phase != 2:
            continue
        nxt = Config(rule.dst, tuple(x + y for x, y in zip(cur.counters, rule.delta)))
        path.append(nxt)
        cur = nxt
    if not is_safe_prefix(pmc, path, z_all(pmc.dimension)):
        raise AssertionError("covering witness is not a safe path")
    return path


# --- approximation ---------------------------------------------------------------

@dataclass
class ApproxResult:
    nu: object
    eps: float
    constants: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.nu)


class _Case1Approximator:
    def __init__(self, exact_cap: int, node_cap: int):
        self.exact_cap = exact_cap
        self.node_cap = node_cap
        self.boxes: dict = {}
        self.constants: dict = {}
        self._caps: dict = {}
        self._certs: dict = {}
        self.diagnostics: dict = {"boxes": 0, "box_nodes": 0, "exact_solves": 0, "float_solves": 0}

    def caps(self, pmc: Pmc, an: BsccAnalysis, eps: float) -> tuple[int, ...]:
        hit = self._caps.get((pmc, an.component, eps))
        if hit is not None:
            return hit
        d = pmc.dimension
        out = []
        floor = model_info(pmc).floor
        for j in range(d):
            if an.trend[j] > 0:
                ck = (pmc, an.component, j + 1)
                if ck not in self._certs:
                    self._certs[ck] = decay_certificate(pmc, an.component, j + 1, floor)
                info = truncation_level(pmc, an.component, j + 1, eps / d, floor, cert=self._certs[ck])
                key = f"d{d}:C{sorted(map(str, an.component))}:counter{j + 1}"
                self.constants.setdefault(key, info)
                out.append(int(info["K"]))
            else:
                out.append(len(an.component))
        self._caps[(pmc, an.component, eps)] = tuple(out)
        return tuple(out)

    @staticmethod
    def mindiv(u, caps) -> int | None:
        for j, (x, c) in enumerate(zip(u, caps)):
            if x >= c:
                return j
        return None

    def value(self, pmc: Pmc, cfg: Config, eps: float):
        d = pmc.dimension
        if d == 0:
            return Fraction(0)
        if zero_set(cfg):
            return Fraction(1)
        an = model_info(pmc).of_state.get(cfg.state)
        if an is None:
            raise AssertionError("value() expects a configuration inside a bottom component")
        if not an.all_diverging:
            return Fraction(1)
        caps = self.caps(pmc, an, eps)
        j = self.mindiv(cfg.counters, caps)
        if j is not None:
            if d == 1:
                return Fraction(0)
            sub = forget_counter(pmc, j + 1)
            return self.value(sub, Config(cfg.state, cfg.counters[:j] + cfg.counters[j + 1:]), eps * (d - 1) / d)
        return self.box(pmc, an, eps, caps)[cfg]

    def box(self, pmc: Pmc, an: BsccAnalysis, eps: float, caps) -> dict:
        key = (pmc, an.component, eps)
        got = self.boxes.get(key)
        if got is not None:
            return got
        floor = model_info(pmc).floor
        size = len(an.component) * math.prod(max(0, c - 1) for c in caps)
        if size > self.node_cap:
            raise ResourceExhausted(f"truncated chain would have {size} nodes (cap {self.node_cap})", nodes=size)
        zero = ("zero",)
        interior = [Config(q, u) for q in an.component for u in np.ndindex(*[c - 1 for c in caps])]
        interior = [Config(c.state, tuple(x + 1 for x in c.counters)) for c in interior]
        trans: dict = {zero: [(zero, Fraction(1))]}
        fixed: dict = {zero: Fraction(1)}
        for cfg in interior:
            row = []
            for r, p in floor.rule_probs[cfg.state]:
                if r is None:
                    row.append((cfg, p))
                    continue
                u = tuple(x + y for x, y in zip(cfg.counters, r.delta))
                if 0 in u:
                    row.append((zero, p))
                    continue
                nxt = Config(r.dst, u)
                if self.mindiv(u, caps) is not None and nxt not in fixed:
                    fixed[nxt] = self.value(pmc, nxt, eps)
                    trans[nxt] = [(nxt, Fraction(1))]
                row.append((nxt, p))
            trans[cfg] = row
        chain = FiniteChain.from_mapping(trans, nodes=interior + [zero])
        fixed_idx = {chain.index[c]: v for c, v in fixed.items()}
        exact = all(isinstance(v, Fraction) for v in fixed.values()) and len(interior) <= self.exact_cap
        vals = absorption_values(chain, fixed_idx, exact=exact, exact_cap=self.exact_cap)
        self.diagnostics["boxes"] += 1
        self.diagnostics["box_nodes"] += len(interior)
        self.diagnostics["exact_solves" if exact else "float_solves"] += 1
        out = {c: vals[chain.index[c]] for c in interior}
        self.boxes[key] = out
        return out

    def transient(self, pmc: Pmc, start: Config, eps: float):
        info = model_info(pmc)
        n = self.horizon(pmc, eps / 2)
        zero = ("zero",)
        depth = {start: 0}
        order = [start]
        trans: dict = {zero: [(zero, Fraction(1))]}
        fixed: dict = {zero: Fraction(1)}
        frontier = ("cut",)
        q = deque([start])
        while q:
            cfg = q.popleft()
            if depth[cfg] >= n:
                trans[cfg] = [(frontier, Fraction(1))]
                continue
            row = []
            for r, p in info.floor.rule_probs[cfg.state]:
                if r is None:
                    row.append((cfg, p))
                    continue
                u = tuple(x + y for x, y in zip(cfg.counters, r.delta))
                if 0 in u:
                    row.append((zero, p))
                    continue
                nxt = Config(r.dst, u)
                if nxt not in depth and nxt not in fixed:
                    if r.dst in info.of_state:
                        fixed[nxt] = self.value(pmc, nxt, eps / 2)
                        trans[nxt] = [(nxt, Fraction(1))]
                    else:
                        depth[nxt] = depth[cfg] + 1
                        order.append(nxt)
                        q.append(nxt)
                        if len(order) > self.node_cap:
                            raise ResourceExhausted("pre-component unfolding exceeds the node cap", nodes=len(order))
                row.append((nxt, p))
            trans[cfg] = row
        trans[frontier] = [(frontier, Fraction(1))]
        fixed[frontier] = Fraction(0)
        chain = FiniteChain.from_mapping(trans, nodes=order + [zero, frontier])
        fixed_idx = {chain.index[c]: v for c, v in fixed.items()}
        exact = all(isinstance(v, Fraction) for v in fixed.values()) and len(order) <= self.exact_cap
        vals = absorption_values(chain, fixed_idx, exact=exact, exact_cap=self.exact_cap)
        self.diagnostics["unfolding_nodes"] = len(order)
        return vals[chain.index[start]]

    def horizon(self, pmc: Pmc, budget: float) -> int:
        info = model_info(pmc)
        limit = escape_horizon(pmc, budget)
        trans_states = [q for q in pmc.states if q not in info.of_state]
        pos = {q: k for k, q in enumerate(trans_states)}
        m = np.zeros((len(trans_states), len(trans_states)))
        for q in trans_states:
            for r, p in info.floor.rule_probs[q]:
                dst = q if r is None else r.dst
                if dst in pos:
                    m[pos[q], pos[dst]] += float(p)
        w = np.ones(len(trans_states))
        k = 0
        while w.size and w.max() > budget and k < limit:
            w = m @ w
            k += 1
            if k > 10_000_000:
                break
        n = int(min(k, limit))
        self.constants["unfolding"] = {"n": n, "n_escape_bound": limit}
        return n


def approx_case1(pmc: Pmc, start, eps: float, relative: bool = False, exact_cap: int = DEFAULT_EXACT_CAP,
                 node_cap: int = DEFAULT_NODE_CAP) -> ApproxResult:
    """Probability of eventually hitting a zero counter, to within ``eps``."""
    if not eps > 0:
        raise PreconditionViolated("eps must be positive")
    start = make_config(*start)
    if zero_set(start):
        return ApproxResult(Fraction(1), eps, diagnostics={"stopped_at_start": True})
    qual = qualitative_case1(pmc, start)
    if qual.almost_sure:
        return ApproxResult(Fraction(1), eps, diagnostics={"qualitative": "almost_sure"})
    target = eps
    lower = None
    if relative:
        m = max(start.counters)
        lower = pmc.min_probability ** (m * len(pmc.states))
        target = eps * float(lower)
        if target <= 0:
            raise PreconditionViolated("relative target underflows double precision")
    solver = _Case1Approximator(exact_cap, node_cap)
    if start.state in model_info(pmc).of_state:
        nu = solver.value(pmc, start, target)
    else:
        nu = solver.transient(pmc, start, target)
    diag = dict(solver.diagnostics)
    diag["qualitative"] = "not_almost_sure"
    diag["absolute_target"] = target
    if relative and lower is not None and float(nu) < float(lower) - target:
        nu = Fraction(0)
        diag["relative_zero"] = True
    if isinstance(nu, float):
        nu = min(1.0, max(0.0, nu))
    return ApproxResult(nu, eps, constants=solver.constants, diagnostics=diag)
