"""Stopping on any zero counter except one free counter.

The free counter is kept exact and the other counters become per-step rewards,
which turns the model into a labeled one-counter chain.  Its first-passage
matrix G (probability that a walk started one level up first returns to the
level below in a given state) drives everything here: the chain of successive
zero visits, expected return times and rewards, and long-run reward trends.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Sequence

import numpy as np

from .chain import FiniteChain, scc_decomposition
from .case1 import ApproxResult, analyze_bscc, build_floor_chain, bottom_components
from .coverability import OMEGA, karp_miller_cover_above, nonneg_cycle_exists, to_blocking_vass
from .model import Config, Pmc, PreconditionViolated, ResourceExhausted, Rule, make_config

DEFAULT_TOL = 1e-12


# --- the one-counter abstraction ----------------------------------------------------

@dataclass(frozen=True)
class OcRule:
    src: Hashable
    step: int
    at_zero: bool
    weight: int
    dst: Hashable
    reward: tuple[int, ...]


@dataclass(frozen=True)
class OneCounterAbstraction:
    states: tuple
    rules: tuple[OcRule, ...]
    reward_dim: int
    counter: int | None = None

    @property
    def index(self) -> dict:
        return {q: k for k, q in enumerate(self.states)}


def project_counter(pmc: Pmc, i: int) -> OneCounterAbstraction:
    """Keep counter ``i`` exact; the remaining counters become rewards.

    Zero-test sets other than the empty set and {i} describe configurations
    that are already stopped, so those rules are dropped.
    """
    if pmc.dimension < 2:
        raise PreconditionViolated("the one-counter abstraction needs dimension >= 2")
    if not 1 <= i <= pmc.dimension:
        raise PreconditionViolated(f"counter {i} out of range")
    out = []
    for r in pmc.rules:
        if r.zero_test and r.zero_test != frozenset([i]):
            continue
        reward = r.delta[: i - 1] + r.delta[i:]
        out.append(OcRule(r.src, r.delta[i - 1], bool(r.zero_test), r.weight, r.dst, reward))
    return OneCounterAbstraction(pmc.states, tuple(out), pmc.dimension - 1, i)


def onedim_abstraction(pmc: Pmc) -> OneCounterAbstraction:
    """View a one-dimensional model as a one-counter abstraction without rewards."""
    if pmc.dimension != 1:
        raise PreconditionViolated("expected a one-dimensional model")
    rules = tuple(OcRule(r.src, r.delta[0], bool(r.zero_test), r.weight, r.dst, ()) for r in pmc.rules)
    return OneCounterAbstraction(pmc.states, rules, 0, 1)


@dataclass
class StepMatrices:
    states: tuple
    Q0: np.ndarray  # from counter 0, counter stays 0
    Qu: np.ndarray  # from counter 0, counter goes up
    Pd: np.ndarray
    P0: np.ndarray
    Pu: np.ndarray
    d0: np.ndarray  # expected one-step reward from counter 0, shape (n, rewards)
    dpos: np.ndarray
    padded_zero: frozenset = frozenset()
    padded_pos: frozenset = frozenset()

    def floats(self) -> "StepMatrices":
        conv = {k: np.asarray(getattr(self, k), dtype=float)
                for k in ("Q0", "Qu", "Pd", "P0", "Pu", "d0", "dpos")}
        return StepMatrices(self.states, **conv, padded_zero=self.padded_zero, padded_pos=self.padded_pos)

    @property
    def n(self) -> int:
        return len(self.states)


def step_matrices(b: OneCounterAbstraction, exact: bool = True) -> StepMatrices:
    """One-step matrices; rational entries, or floats when ``exact`` is False."""
    n, rd = len(b.states), b.reward_dim
    idx = b.index
    if exact:
        zero, prob = Fraction(0), Fraction
    else:
        zero, prob = 0.0, lambda w, tot: w / tot
    mats = {k: np.full((n, n), zero, dtype=object if exact else float) for k in ("Q0", "Qu", "Pd", "P0", "Pu")}
    d0 = np.full((n, rd), zero, dtype=object if exact else float)
    dpos = np.full((n, rd), zero, dtype=object if exact else float)
    by_src: dict = {}
    for r in b.rules:
        by_src.setdefault((r.src, r.at_zero), []).append(r)
    pad0, padp = set(), set()
    for q in b.states:
        k = idx[q]
        zero_rules = [r for r in by_src.get((q, True), []) if r.step >= 0]
        if zero_rules:
            tot = sum(r.weight for r in zero_rules)
            for r in zero_rules:
                p = prob(r.weight, tot)
                mats["Q0" if r.step == 0 else "Qu"][k, idx[r.dst]] += p
                for j in range(rd):
                    d0[k, j] += p * r.reward[j]
        else:
            mats["Q0"][k, k] += 1
            pad0.add(q)
        pos_rules = by_src.get((q, False), [])
        if pos_rules:
            tot = sum(r.weight for r in pos_rules)
            for r in pos_rules:
                p = prob(r.weight, tot)
                mats[{-1: "Pd", 0: "P0", 1: "Pu"}[r.step]][k, idx[r.dst]] += p
                for j in range(rd):
                    dpos[k, j] += p * r.reward[j]
        else:
            mats["P0"][k, k] += 1
            padp.add(q)
    return StepMatrices(b.states, d0=d0, dpos=dpos, padded_zero=frozenset(pad0), padded_pos=frozenset(padp), **mats)


def _as_float(sm) -> StepMatrices:
    return sm if sm.Pd.dtype == float else sm.floats()


# --- G matrix --------------------------------------------------------------------

@dataclass
class GSolution:
    G: np.ndarray
    up: np.ndarray
    method: str
    iterations: int
    residual: float
    support: np.ndarray


def g_support(Pd, P0, Pu) -> np.ndarray:
    """Exact zero pattern of the least solution (boolean fixed point).

    Worklist saturation of G[q,r] <- Pd[q,r] | P0[q,s] G[s,r] | Pu[q,s] G[s,t] G[t,r];
    each fact is combined with the facts already processed, so the cost
    follows the size of the support rather than the nesting depth.
    """
    n = Pd.shape[0]
    z_pred = [np.nonzero(P0[:, a])[0].tolist() for a in range(n)]
    u_pred = [np.nonzero(Pu[:, a])[0].tolist() for a in range(n)]
    out: list[set] = [set() for _ in range(n)]
    inn: list[set] = [set() for _ in range(n)]
    g = np.zeros((n, n), dtype=bool)
    todo = list(zip(*np.nonzero(Pd)))
    for a, b in todo:
        g[a, b] = True
    while todo:
        a, b = todo.pop()
        out[a].add(b)
        inn[b].add(a)
        new = [(q, b) for q in z_pred[a]]
        new += [(q, r) for q in u_pred[a] for r in out[b]]  # (a, b) first, (b, r) second
        new += [(q, b) for s in inn[a] for q in u_pred[s]]  # (s, a) first, (a, b) second
        for q, r in new:
            if not g[q, r]:
                g[q, r] = True
                todo.append((q, r))
    return g


def _residual(G, Pd, P0, Pu) -> float:
    return float(np.max(np.abs(Pd + P0 @ G + Pu @ G @ G - G))) if G.size else 0.0


def solve_g_matrix(sm, tol: float = DEFAULT_TOL, max_iter: int = 100_000, method: str = "auto") -> GSolution:
    """Least solution of G = Pd + P0 G + Pu G^2 and the escape vector 1 - G 1.

    ``method='value'`` is plain monotone value iteration from 0.  The default
    is logarithmic reduction (quadratic convergence, and still accurate in the
    zero-drift regime where value iteration stalls), falling back to Newton
    and then value iteration when its residual is not small.  ``method='newton'``
    solves the support-cleaned system with Kronecker-form Newton steps.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    f = _as_float(sm)
    Pd, P0, Pu = f.Pd, f.P0, f.Pu
    support = g_support(Pd, P0, Pu)
    if method == "auto":
        # LR can meet a singular reduction step; fall back in that case
        for m in ("lr", "newton", "value"):
            try:
                with np.errstate(all="ignore"):
                    sol = solve_g_matrix(f, tol, max_iter, m)
            except (ResourceExhausted, np.linalg.LinAlgError):
                continue
            if np.isfinite(sol.residual) and sol.residual <= max(1e-8, 100 * tol):
                return sol
        raise ResourceExhausted("no G solver reached the residual target")
    if method == "value":
        G, it = _g_value(Pd, P0, Pu, tol, max_iter)
    elif method == "newton":
        G, it = _g_newton(Pd, P0, Pu, support, tol, max_iter)
    elif method == "lr":
        G, it = _g_lr(Pd, P0, Pu, support, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    G = np.where(support, np.clip(G, 0.0, 1.0), 0.0)
    rows = G.sum(axis=1)
    over = rows > 1.0
    if over.any():
        G[over] /= rows[over, None]
    up = np.clip(1.0 - G.sum(axis=1), 0.0, 1.0)
    return GSolution(G, up, method, it, _residual(G, Pd, P0, Pu), support)


def _g_value(Pd, P0, Pu, tol, max_iter):
    G = np.zeros_like(Pd)
    for k in range(1, max_iter + 1):
        new = Pd + P0 @ G + Pu @ G @ G
        if np.max(np.abs(new - G), initial=0.0) <= tol:
            return new, k
        G = new
    raise ResourceExhausted("value iteration for G did not converge", iterations=max_iter,
                            residual=_residual(G, Pd, P0, Pu))


def _g_newton(Pd, P0, Pu, support, tol, max_iter):
    n = Pd.shape[0]
    cols = np.flatnonzero(support.T.ravel())  # column-major positions of unknown entries
    G = np.zeros_like(Pd)
    if cols.size == 0:
        return G, 0
    eye_n = np.eye(n)
    for k in range(1, min(max_iter, 500) + 1):
        F = Pd + P0 @ G + Pu @ G @ G - G
        M = P0 + Pu @ G
        J = np.eye(n * n) - np.kron(eye_n, M) - np.kron(G.T, Pu)
        Js = J[np.ix_(cols, cols)]
        rhs = F.T.ravel()[cols]
        try:
            step = np.linalg.solve(Js, rhs)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(Js, rhs, rcond=None)[0]
        flat = G.T.ravel().copy()
        flat[cols] += step
        G = flat.reshape(n, n).T.copy()
        if np.max(np.abs(step)) <= tol:
            return G, k
    return G, k


def _g_lr(Pd, P0, Pu, support, tol, max_iter):
    n = Pd.shape[0]
    live = support.any(axis=1)
    mask = live[:, None].astype(float)
    A0, A1, A2 = Pu * mask, P0 * mask, Pd * mask
    eye = np.eye(n)
    inv = np.linalg.inv(eye - A1)
    up, down = inv @ A0, inv @ A2
    G, T = down.copy(), up.copy()
    for k in range(1, min(max_iter, 200) + 1):
        U = up @ down + down @ up
        inv = np.linalg.inv(eye - U)
        up, down = inv @ (up @ up), inv @ (down @ down)
        add = T @ down
        G = G + add
        T = T @ up
        if np.max(np.abs(add), initial=0.0) <= tol * 1e-2:
            break
    # a few fixed-point polishing steps
    for _ in range(3):
        G = np.where(support, Pd + P0 @ G + Pu @ G @ G, 0.0)
    return G, k


# --- the chain of zero visits ----------------------------------------------------

def up_state(q) -> tuple:
    return ("up", q)


@dataclass
class XChain:
    chain: FiniteChain
    A: np.ndarray  # level-0 to level-0 transition matrix over all states
    G: np.ndarray
    up: np.ndarray  # probability of never returning to zero, per state
    pruned_mass: float
    tol: float


def build_x_chain(sm, g: GSolution, tol: float = DEFAULT_TOL) -> XChain:
    f = _as_float(sm)
    A = f.Q0 + f.Qu @ g.G
    up = np.clip(1.0 - A.sum(axis=1), 0.0, 1.0)
    trans, pruned = {}, 0.0
    for k, q in enumerate(f.states):
        row = []
        for j, r in enumerate(f.states):
            x = A[k, j]
            if x > tol:
                row.append((r, float(x)))
            else:
                pruned += max(0.0, x)
        if up[k] > tol:
            row.append((up_state(q), float(up[k])))
        else:
            pruned += up[k]
        tot = sum(x for _, x in row)
        trans[q] = [(r, x / tot) for r, x in row] if row else [(q, 1.0)]
        trans[up_state(q)] = [(up_state(q), 1.0)]
    nodes = list(f.states) + [up_state(q) for q in f.states]
    return XChain(FiniteChain.from_mapping(trans, nodes=nodes), A, g.G, up, pruned, tol)


def x_bottoms_reachable(x: XChain, start) -> list[tuple]:
    ch = x.chain
    seen = {ch.index[start]}
    q = deque(seen)
    while q:
        v = q.popleft()
        for w in ch.successors(v):
            if w not in seen:
                seen.add(w)
                q.append(w)
    dec = scc_decomposition(ch)
    out = []
    for comp in dec.bottoms():
        if comp[0] in seen:
            out.append(tuple(ch.nodes[k] for k in comp))
    return out


def excursion_states(sm, D) -> list[int]:
    """Indices of states that can be visited at positive counter during an excursion from D."""
    f = _as_float(sm)
    idx = {q: k for k, q in enumerate(f.states)}
    todo = deque()
    seen = set()
    for q in D:
        for r in np.flatnonzero(f.Qu[idx[q]] > 0):
            todo.append((int(r), 1))
    while todo:
        s, lvl = todo.popleft()
        if (s, lvl) in seen:
            continue
        seen.add((s, lvl))
        for r in np.flatnonzero(f.P0[s] > 0):
            todo.append((int(r), lvl))
        for r in np.flatnonzero(f.Pu[s] > 0):
            todo.append((int(r), 2))
        if lvl == 2:
            for r in np.flatnonzero(f.Pd[s] > 0):
                todo.append((int(r), 1))
                todo.append((int(r), 2))
    return sorted({s for s, _ in seen})


@dataclass
class ReturnTimes:
    S: list  # excursion state indices
    e_down: np.ndarray  # over S
    e: dict  # D state -> expected return time
    finite: bool
    rho: float
    B: np.ndarray  # over S


def expected_return_times(sm, g: GSolution, D) -> ReturnTimes:
    f = _as_float(sm)
    idx = {q: k for k, q in enumerate(f.states)}
    S = excursion_states(f, D)
    B_full = f.P0 + f.Pu @ g.G + f.Pu
    B = B_full[np.ix_(S, S)]
    rho = float(max(abs(np.linalg.eigvals(B)))) if S else 0.0
    finite = rho < 1 - 1e-9
    e_down = np.full(len(S), math.inf)
    if finite and S:
        e_down = np.linalg.solve(np.eye(len(S)) - B, np.ones(len(S)))
        if (e_down < 0).any():
            finite = False
            e_down = np.full(len(S), math.inf)
    pos = {s: j for j, s in enumerate(S)}
    e = {}
    for q in D:
        k = idx[q]
        tot = 1.0
        for s in np.flatnonzero(f.Qu[k] > 0):
            tot += f.Qu[k, s] * e_down[pos[int(s)]]
        e[q] = tot
    return ReturnTimes(S, e_down, e, finite, rho, B)


def expected_rewards(sm, rt: ReturnTimes, D) -> tuple[np.ndarray, dict]:
    """Expected reward until the next descent (over S) and per zero-to-zero excursion (over D)."""
    f = _as_float(sm)
    if not rt.finite:
        raise PreconditionViolated("expected return times are infinite (critical counter)")
    idx = {q: k for k, q in enumerate(f.states)}
    S = rt.S
    rd = f.dpos.shape[1]
    if S:
        d_down = np.linalg.solve(np.eye(len(S)) - rt.B, f.dpos[S])
    else:
        d_down = np.zeros((0, rd))
    pos = {s: j for j, s in enumerate(S)}
    d1 = {}
    for q in D:
        k = idx[q]
        v = f.d0[k].copy()
        for s in np.flatnonzero(f.Qu[k] > 0):
            v = v + f.Qu[k, s] * d_down[pos[int(s)]]
        d1[q] = v
    return d_down, d1


def _stationary(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    M = np.vstack([A.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    mu = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return np.clip(mu, 0.0, None) / np.clip(mu, 0.0, None).sum()


# --- botinf: least reward dip on a zero-to-zero excursion ----------------------------

def _descent_summaries(b: OneCounterAbstraction, k: int) -> np.ndarray:
    """W[q, r] = least reward-k total on a path from q(1) whose first visit to level 0 is r(0)."""
    n = len(b.states)
    idx = b.index
    down, same, up = [], [], []
    has_pos = set()
    for r in b.rules:
        if r.at_zero:
            continue
        has_pos.add(r.src)
        e = (idx[r.src], idx[r.dst], r.reward[k] if b.reward_dim else 0)
        (down if r.step < 0 else same if r.step == 0 else up).append(e)
    for q in b.states:
        if q not in has_pos:
            same.append((idx[q], idx[q], 0))
    INF = math.inf

    def step(W):
        new = np.full((n, n), INF)
        for s, t, w in down:
            new[s, t] = min(new[s, t], w)
        for s, t, w in same:
            new[s] = np.minimum(new[s], w + W[t])
        if up:
            with np.errstate(invalid="ignore"):
                WW = np.min(W[:, :, None] + W[None, :, :], axis=1)
            WW = np.nan_to_num(WW, nan=INF, posinf=INF, neginf=-INF)
            for s, t, w in up:
                new[s] = np.minimum(new[s], w + WW[t])
        return new

    W = np.full((n, n), INF)
    rounds = n * n + 2
    for _ in range(rounds):
        W = step(W)
    W2 = W
    for _ in range(2 * rounds):
        W2 = step(W2)
    W = np.where(W2 < W, -INF, W)
    for _ in range(2 * rounds):
        new = np.minimum(step(W), np.where(np.isneginf(W), -INF, INF))
        if np.array_equal(new, W):
            break
        W = new
    return W


def botinf(b: OneCounterAbstraction, D, k: int) -> dict:
    """Least j with every zero-to-zero return to q keeping reward k (1-based) >= -j; INF if none.

    Values are per state: a negative loop through q(0) itself does not make
    the dip from q unbounded, although it does for the other states of D.
    ``oc_diverging`` treats the reward as decreasing once any state is INF.
    """
    n = len(b.states)
    idx = b.index
    W = _descent_summaries(b, k - 1)
    edges = []
    has_zero = set()
    for r in b.rules:
        if not r.at_zero or r.step < 0:
            continue
        has_zero.add(r.src)
        w = r.reward[k - 1] if b.reward_dim else 0
        s = idx[r.src]
        if r.step == 0:
            edges.append((s, idx[r.dst], w))
        else:
            t = idx[r.dst]
            for u in range(n):
                if W[t, u] < math.inf:
                    edges.append((s, u, w + W[t, u]))
    for q in b.states:
        if q not in has_zero:
            edges.append((idx[q], idx[q], 0))
    out = {}
    for q in D:
        s0 = idx[q]
        # node n is the copy of q used as the sink
        dist = [math.inf] * (n + 1)
        for s, t, w in edges:
            if s == s0:
                tt = n if t == s0 else t
                dist[tt] = min(dist[tt], w)
        for _ in range(n + 1):
            for s, t, w in edges:
                if s == s0 or dist[s] == math.inf:
                    continue
                tt = n if t == s0 else t
                if dist[s] + w < dist[tt]:
                    dist[tt] = dist[s] + w
        neg = any(s != s0 and dist[s] < math.inf and dist[s] + w < dist[n if t == s0 else t] for s, t, w in edges)
        best = dist[n]
        if neg or best == -math.inf:
            out[q] = math.inf
        elif best == math.inf:
            out[q] = 0
        else:
            out[q] = int(max(0, -best))
    return out


# --- per-component analysis ------------------------------------------------------

@dataclass
class OcAnalysis:
    component: tuple
    mu: dict
    e: dict
    e_down: dict
    finite: bool
    rho: float
    delta_down: dict = field(default_factory=dict)
    delta1: dict = field(default_factory=dict)
    t_oc: tuple = ()
    botinf: dict = field(default_factory=dict)
    diverging: tuple = ()

    @property
    def all_diverging(self) -> bool:
        return all(self.diverging)


def oc_trend(mu: dict, delta1: dict, e: dict) -> tuple:
    denom = sum(mu[q] * e[q] for q in mu)
    if not mu:
        return ()
    rd = len(next(iter(delta1.values())))
    return tuple(float(sum(mu[q] * delta1[q][j] for q in mu) / denom) for j in range(rd))


def oc_diverging(t_oc: Sequence[float], botinf_tables: dict, zero_tol: float = 1e-9) -> tuple[bool, ...]:
    flags = []
    for j, t in enumerate(t_oc):
        if t > zero_tol:
            flags.append(True)
        elif t < -zero_tol:
            flags.append(False)
        else:
            flags.append(all(v != math.inf for v in botinf_tables[j + 1].values()))
    return tuple(flags)


def analyze_component(b: OneCounterAbstraction, sm, g: GSolution, D) -> OcAnalysis:
    f = _as_float(sm)
    idx = b.index
    Dk = [idx[q] for q in D]
    A = (f.Q0 + f.Qu @ g.G)[np.ix_(Dk, Dk)]
    mu_vec = _stationary(A)
    mu = {q: float(m) for q, m in zip(D, mu_vec)}
    rt = expected_return_times(f, g, D)
    an = OcAnalysis(tuple(D), mu, rt.e, {f.states[s]: float(v) for s, v in zip(rt.S, rt.e_down)}, rt.finite, rt.rho)
    if not rt.finite:
        return an
    d_down, d1 = expected_rewards(f, rt, D)
    an.delta_down = {f.states[s]: d_down[j] for j, s in enumerate(rt.S)}
    an.delta1 = d1
    an.t_oc = oc_trend(mu, d1, rt.e)
    for j in range(1, b.reward_dim + 1):
        an.botinf[j] = botinf(b, D, j)
    an.diverging = oc_diverging(an.t_oc, an.botinf)
    return an


# --- qualitative decision ----------------------------------------------------------

def normalize_start(pmc: Pmc, start: Config, i: int) -> tuple[Pmc, Config]:
    """Rewrite so the run starts with the free counter at zero.

    Fresh states ``_init0 .. _init{k-1}`` raise counter i from 0 to its
    requested start value before handing control to the original state.
    """
    k = start.counters[i - 1]
    if k == 0:
        return pmc, start
    names = []
    j = 0
    taken = set(map(str, pmc.states))
    while len(names) < k:
        nm = f"_init{j}"
        if nm not in taken:
            names.append(nm)
        j += 1
    d = pmc.dimension
    bump = tuple(1 if c == i - 1 else 0 for c in range(d))
    rules = list(pmc.rules)
    for t, nm in enumerate(names):
        dst = names[t + 1] if t + 1 < k else start.state
        test = frozenset([i]) if t == 0 else frozenset()
        rules.append(Rule(nm, bump, test, 1, dst))
    new = Pmc(d, tuple(names) + tuple(pmc.states), tuple(rules), "general", name=pmc.name)
    counters = start.counters[: i - 1] + (0,) + start.counters[i:]
    return new, Config(names[0], counters)


@dataclass
class Case2Qualitative:
    verdict: str  # "almost_sure", "not_almost_sure" or "unknown"
    witness: dict | None = None
    analyses: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def bound_exhausted(self) -> bool:
        return self.verdict == "unknown"


@dataclass
class Case2Model:
    pmc: Pmc
    start: Config
    b: OneCounterAbstraction
    sm: StepMatrices
    g: GSolution
    x: XChain
    bottoms: list
    analyses: dict


def prepare_case2(pmc: Pmc, start: Config, i: int, tol: float = DEFAULT_TOL) -> Case2Model:
    npmc, nstart = normalize_start(pmc, start, i)
    b = project_counter(npmc, i)
    sm = step_matrices(b)
    g = solve_g_matrix(sm, tol=tol)
    x = build_x_chain(sm, g, tol)
    bottoms = x_bottoms_reachable(x, nstart.state)
    analyses = {}
    for D in bottoms:
        if len(D) == 1 and isinstance(D[0], tuple) and D[0][:1] == ("up",):
            continue
        an = analyze_component(b, sm, g, D)
        if not an.finite:
            raise PreconditionViolated(f"critical counter: expected return time is infinite in component {list(D)}")
        analyses[D] = an
    return Case2Model(npmc, nstart, b, sm, g, x, bottoms, analyses)


class _Search:
    """Bounded forward search with counter ``i`` exact and the others accelerated.

    Nodes violating the stopping criterion are discarded, so every node is
    reached by a safe path.  Counter i is capped at ``bound``; hitting the cap
    or the node budget marks the search as truncated.
    """

    def __init__(self, pmc: Pmc, i: int, bound: int, node_budget: int):
        self.pmc, self.i, self.bound, self.node_budget = pmc, i - 1, bound, node_budget
        self.truncated = False
        self.nodes = 0

    def successors(self, state, vec):
        zs = frozenset(k + 1 for k, x in enumerate(vec) if x == 0)
        rules = [r for r in self.pmc.rules_for(state, zs) if not any(r.delta[k - 1] < 0 for k in zs)]
        for r in rules:
            nv = tuple(x + y for x, y in zip(vec, r.delta))
            if any(x == 0 for k, x in enumerate(nv) if k != self.i):
                continue
            yield r, nv

    def run(self, start: Config, accept):
        root = (start.state, tuple(start.counters))
        parents = {root: None}
        anc = {root: ()}
        seen: dict = {}
        q = deque([root])
        if accept(*root):
            return self._path(parents, root)
        while q:
            node = q.popleft()
            state, vec = node
            for r, nv in self.successors(state, vec):
                nv = list(nv)
                chain = anc[node] + (node,)
                for (s2, v2) in chain:
                    if s2 != r.dst or v2[self.i] != nv[self.i]:
                        continue
                    if all(a <= c for a, c in zip(v2, nv)) and any(a < c for a, c in zip(v2, nv)):
                        for k in range(len(nv)):
                            if k != self.i and v2[k] < nv[k]:
                                nv[k] = OMEGA
                nv = tuple(nv)
                if nv[self.i] > self.bound:
                    self.truncated = True
                    continue
                child = (r.dst, nv)
                if child in parents:
                    continue
                key = (r.dst, nv[self.i])
                if any(all(a >= c for a, c in zip(other, nv)) for other in seen.get(key, ())):
                    continue
                seen.setdefault(key, []).append(nv)
                parents[child] = (node, r)
                anc[child] = chain
                self.nodes += 1
                if accept(*child):
                    return self._path(parents, child)
                if self.nodes >= self.node_budget:
                    self.truncated = True
                    return None
                q.append(child)
        return None

    @staticmethod
    def _path(parents, node):
        out = []
        while node is not None:
            out.append(node)
            p = parents[node]
            node = p[0] if p else None
        return out[::-1]


def _meets(vec, floor) -> bool:
    for x, f in zip(vec, floor):
        if f is None:
            continue
        if f == OMEGA:
            if x != OMEGA:
                return False
        elif x < f:
            return False
    return True


def qualitative_case2(pmc: Pmc, start, i: int, search_bound: int = 64, node_budget: int = 200_000,
                      tol: float = DEFAULT_TOL) -> Case2Qualitative:
    start = make_config(*start)
    d = pmc.dimension
    if any(x == 0 for k, x in enumerate(start.counters) if k != i - 1):
        return Case2Qualitative("almost_sure", diagnostics={"stopped_at_start": True})
    model = prepare_case2(pmc, start, i, tol)
    res = Case2Qualitative("almost_sure", analyses=list(model.analyses.values()))
    res.diagnostics.update(g_method=model.g.method, g_residual=model.g.residual, pruned_mass=model.x.pruned_mass,
                           search_bound=search_bound, oc_threshold="omega-coverage in place of an explicit level constant")
    others = [k for k in range(d) if k != i - 1]

    # (i) components of the zero-visit chain where every reward drifts up
    targets = {}
    for D, an in model.analyses.items():
        if not an.all_diverging:
            continue
        for q in D:
            floor = [None] * d
            floor[i - 1] = 0
            for j, k in enumerate(others):
                t = an.t_oc[j]
                floor[k] = OMEGA if t > 1e-9 else max(1, an.botinf[j + 1][q])
            targets[q] = (tuple(floor), D)

    # (ii) escape of the free counter with all counters diverging in the floor chain
    ups = [D for D in model.bottoms if len(D) == 1 and isinstance(D[0], tuple) and D[0][:1] == ("up",)]
    escape = []
    if ups:
        floor_chain = build_floor_chain(model.pmc)
        for C in bottom_components(floor_chain):
            an = analyze_bscc(model.pmc, C, floor_chain)
            if not an.all_diverging:
                continue
            edges = floor_chain.edges(C, d)
            strict = {j + 1 for j in range(d) if an.trend[j] > 0}
            for q in C:
                if nonneg_cycle_exists(edges, strict, through=q, dimension=d):
                    fl = tuple(OMEGA if an.trend[j] > 0 else max(1, an.botfin[j + 1][q]) for j in range(d))
                    escape.append((q, fl, C))
    res.diagnostics["candidate_components"] = len(targets)
    res.diagnostics["escape_candidates"] = len(escape)
    if not targets and not escape:
        return res

    search = _Search(model.pmc, i, search_bound, node_budget)
    entries = []

    def accept(state, vec):
        t = targets.get(state)
        if t is not None and _meets(vec, t[0]):
            return True
        if escape and all(x >= 1 for x in vec):
            entries.append((state, vec))
        return False

    path = search.run(model.start, accept)
    res.diagnostics["search_nodes"] = search.nodes
    if path is not None:
        state, vec = path[-1]
        res.verdict = "not_almost_sure"
        res.witness = {"kind": "oc-diverging component", "component": list(targets[state][1]), "state": state,
                       "path": [[s, _show(v)] for s, v in path], "t_oc": list(model.analyses[targets[state][1]].t_oc)}
        return res
    if escape:
        vass = to_blocking_vass(model.pmc)
        kept = []
        for st, vec in entries:
            if any(s2 == st and all(a >= c for a, c in zip(v2, vec)) for s2, v2 in kept):
                continue
            kept.append((st, vec))
        for st, vec in kept[:256]:
            for q, fl, C in escape:
                cov = karp_miller_cover_above(vass, st, vec, q, fl, node_budget=node_budget, witness=False)
                if cov:
                    res.verdict = "not_almost_sure"
                    res.witness = {"kind": "free-counter escape", "component": list(C), "state": q,
                                   "entry": [st, _show(vec)], "floor": _show(fl)}
                    return res
        if len(kept) > 256:
            search.truncated = True
    if search.truncated:
        res.verdict = "unknown"
        res.diagnostics["bound_exhausted"] = True
    return res


def _show(vec):
    return ["omega" if x == OMEGA else x for x in vec]


# --- quantitative: one-counter reachability and the product construction ----------------

_SINK = ("target",)


def onedim_reach_approx(b, start, targets, eps: float = 1e-9, tol: float = DEFAULT_TOL) -> float:
    """Probability of ever visiting a state in ``targets`` in a one-counter chain.

    Targets are replaced by a state that walks the counter down to zero, so
    target mass shows up as first-passage mass into that state: with y_n the
    answer at counter n, y_n = G y_{n-1} for n >= 1 and y_0 solves the level-0
    system.
    """
    if isinstance(b, Pmc):
        b = onedim_abstraction(b)
    state, level = start
    targets = set(targets)
    if state in targets:
        return 1.0
    # graph pre-check: ignore counter values
    adj: dict = {}
    for r in b.rules:
        adj.setdefault(r.src, set()).add(r.dst)
    seen, q = {state}, deque([state])
    while q:
        v = q.popleft()
        for w in adj.get(v, ()):
            if w not in seen:
                seen.add(w)
                q.append(w)
    if not seen & targets:
        return 0.0
    rules = [r for r in b.rules if r.src not in targets and r.src in seen]
    rules = [OcRule(r.src, r.step, r.at_zero, r.weight, _SINK if r.dst in targets else r.dst, ()) for r in rules]
    rules.append(OcRule(_SINK, -1, False, 1, _SINK, ()))
    states = tuple(s for s in b.states if s in seen and s not in targets) + (_SINK,)
    ab = OneCounterAbstraction(states, tuple(rules), 0)
    sm = step_matrices(ab, exact=False)
    g = solve_g_matrix(sm, tol=tol)
    n = len(states)
    A = sm.Q0 + sm.Qu @ g.G
    sink = n - 1
    A[sink] = 0.0
    y0 = _least_absorption(A, sink)
    y = y0
    G = g.G.copy()
    for _ in range(level):
        y = G @ y
        y[sink] = 1.0
    return float(min(1.0, max(0.0, y[states.index(state)])))


def _least_absorption(A: np.ndarray, sink: int) -> np.ndarray:
    n = A.shape[0]
    pred = [[] for _ in range(n)]
    for s, t in zip(*np.nonzero(A > 0)):
        pred[t].append(s)
    live = {sink}
    q = deque([sink])
    while q:
        v = q.popleft()
        for u in pred[v]:
            if u not in live:
                live.add(u)
                q.append(u)
    unk = sorted(live - {sink})
    y = np.zeros(n)
    y[sink] = 1.0
    if unk:
        M = np.eye(len(unk)) - A[np.ix_(unk, unk)]
        rhs = A[unk, sink]
        y[unk] = np.linalg.solve(M, rhs)
    return np.clip(y, 0.0, 1.0)


def product_model(pmc: Pmc, i: int, K: int, start: Config, node_cap: int = 4000):
    """One-counter model tracking the other counters exactly below K.

    A counter that reaches K is forgotten (treated as unbounded from then on);
    a counter that reaches 0 sends the run to the target state.  Once every
    non-free counter is forgotten nothing can stop the run any more.
    """
    d = pmc.dimension
    others = [k for k in range(d) if k != i - 1]
    hit, dead = ("hit",), ("dead",)

    def norm(state, vals: dict):
        if any(v == 0 for v in vals.values()):
            return hit
        live = {k: v for k, v in vals.items() if v < K}
        if not live:
            return dead
        return (state, tuple(sorted(live.items())))

    s0 = norm(start.state, {k: start.counters[k] for k in others})
    states, rules = [], []
    index = {}
    todo = deque([s0])
    index[s0] = 0
    states.append(s0)
    while todo:
        node = todo.popleft()
        if node in (hit, dead):
            continue
        state, items = node
        vals = dict(items)
        for test in (frozenset(), frozenset([i])):
            for r in pmc.rules_for(state, test):
                nv = {k: v + r.delta[k] for k, v in vals.items()}
                nxt = norm(r.dst, nv)
                if nxt not in index:
                    index[nxt] = len(states)
                    states.append(nxt)
                    todo.append(nxt)
                    if len(states) > node_cap:
                        raise ResourceExhausted(f"product model exceeds {node_cap} states", states=len(states))
                rules.append(OcRule(node, r.delta[i - 1], bool(test), r.weight, nxt, ()))
    for special in (hit, dead):
        if special not in index:
            index[special] = len(states)
            states.append(special)
    return OneCounterAbstraction(tuple(states), tuple(rules), 0), s0, hit


def approx_case2(pmc: Pmc, start, i: int, eps: float, tol: float = DEFAULT_TOL, node_cap: int = 4000,
                 k0: int = 8, search_bound: int = 64) -> ApproxResult:
    """Probability of stopping under the criterion that ignores counter ``i``.

    The truncation level K is raised until two successive estimates agree to
    within eps/2; each estimate is a lower bound on the true value up to the
    error of forgetting counters at K.
    """
    if not eps > 0:
        raise PreconditionViolated("eps must be positive")
    start = make_config(*start)
    d = pmc.dimension
    if d < 2:
        raise PreconditionViolated("a free counter needs dimension >= 2")
    if any(x == 0 for k, x in enumerate(start.counters) if k != i - 1):
        return ApproxResult(Fraction(1), eps, diagnostics={"stopped_at_start": True})
    qual = qualitative_case2(pmc, start, i, search_bound=search_bound)
    diag = {"qualitative": qual.verdict}
    if qual.verdict == "almost_sure":
        return ApproxResult(Fraction(1), eps, diagnostics=diag)
    if eps >= 1:
        diag["cheap_bound"] = True
        return ApproxResult(0.5, eps, diagnostics=diag)
    K, prev, history = k0, None, []
    while True:
        try:
            b, s0, hit = product_model(pmc, i, K, start, node_cap)
        except ResourceExhausted as e:
            if prev is None:
                raise
            diag["stopped_by_cap"] = str(e)
            break
        nu = onedim_reach_approx(b, (s0, start.counters[i - 1]), {hit}, eps / 2, tol)
        history.append((K, nu))
        if prev is not None and abs(nu - prev) <= eps / 2:
            break
        prev = nu
        K *= 2
    diag.update(history=history, certified=False, product_states=len(b.states))
    return ApproxResult(history[-1][1], eps, constants={"K": history[-1][0]}, diagnostics=diag)


# --- the square-root-sum family ---------------------------------------------------

def sqrt_sum_instance(d_list: Sequence[int], k: int) -> Pmc:
    """Two-counter model whose second counter is free; stopping is almost sure iff sum(sqrt(d)) >= k."""
    if not d_list or any(x <= 0 for x in d_list) or k <= 0:
        raise PreconditionViolated("square-root-sum inputs must be positive")
    n = len(d_list)
    m = max(max(d_list), k)
    E, Z2 = frozenset(), frozenset([2])
    rs = [f"r{j + 1}" for j in range(n)]
    states = ("q", *rs, "s_plus", "s_minus")
    rules = []
    for r in rs:
        rules.append(Rule("q", (0, 0), E, 1, r))
    rules.append(Rule("q", (0, -1), E, n, "s_plus"))
    for r, dj in zip(rs, d_list):
        rules.append(Rule(r, (0, 1), E, m * m, r))
        if m * m - dj > 0:
            rules.append(Rule(r, (0, -1), E, m * m - dj, r))
        rules.append(Rule(r, (0, 0), E, dj, "s_minus"))
        rules.append(Rule(r, (0, 1), Z2, 1, "q"))
    rules.append(Rule("s_minus", (0, -1), E, 1, "s_minus"))
    rules.append(Rule("s_minus", (-1, 1), Z2, 1, "q"))
    rules.append(Rule("s_plus", (1, 1), Z2, k, "q"))
    if n * m - k > 0:
        rules.append(Rule("s_plus", (0, 1), Z2, n * m - k, "q"))
    return Pmc(2, states, tuple(rules), name=f"sqrtsum_{'_'.join(map(str, d_list))}_{k}")
