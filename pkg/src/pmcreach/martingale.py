"""Zero-drift potential for a labeled one-counter chain and its tail constants.

For a bottom component D of the zero-visit chain with reward trend t, the
process  m = reward - t * steps + g(counter)[state]  has zero expected drift,
where g(0) solves a Poisson equation on D and g(n+1) = r_down + G g(n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc, gammaln

from .case2 import (GSolution, OneCounterAbstraction, StepMatrices, _as_float, _stationary, excursion_states,
                    solve_g_matrix, step_matrices)
from .model import PreconditionViolated, ResourceExhausted


@dataclass
class MartingaleData:
    states: tuple
    D: tuple
    S: list
    G: np.ndarray
    A: np.ndarray
    B: np.ndarray
    mu: np.ndarray
    e_down: np.ndarray  # over all states, nan outside the excursion set
    e: np.ndarray  # over D
    delta_down: np.ndarray
    delta1: np.ndarray
    t: float
    r_down: np.ndarray  # over all states
    r0: np.ndarray  # over D
    g0: np.ndarray  # over all states, zero outside D
    e_max: float
    y_min: float
    g_bound: float
    c: float
    matrices: StepMatrices = field(repr=False, default=None)

    def g(self, n: int) -> np.ndarray:
        return g_at(self.g0, self.G, self.r_down, n)


def solve_g0(A: np.ndarray, mu: np.ndarray, r0: np.ndarray, top: float | None = None) -> np.ndarray:
    """A solution of g = r0 + A g on an irreducible stochastic A.

    Solved through the nonsingular system (I - A + 1 mu^T) x = r0; any shift
    by a constant vector stays a solution, and ``top`` fixes the maximum.
    """
    n = A.shape[0]
    if abs(float(mu @ r0)) > 1e-8 * max(1.0, float(np.abs(r0).max(initial=0.0))):
        raise PreconditionViolated("r0 is not orthogonal to the invariant distribution")
    M = np.eye(n) - A + np.outer(np.ones(n), mu)
    x = np.linalg.solve(M, r0)
    if top is not None:
        x = x + (top - x.max())
    res = float(np.max(np.abs(x - r0 - A @ x), initial=0.0))
    if res > 1e-9 * max(1.0, float(np.abs(x).max(initial=0.0))):
        raise ArithmeticError(f"Poisson residual {res:.3g} too large")
    return x


def g_at(g0: np.ndarray, G: np.ndarray, r_down: np.ndarray, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be non-negative")
    g = g0.copy()
    for _ in range(n):
        g = r_down + G @ g
    return g


def g_closed_form(g0, G, r_down, n: int) -> np.ndarray:
    """G^n g0 + sum_{k<n} G^k r_down, evaluated independently of the recursion."""
    out = np.linalg.matrix_power(G, n) @ g0
    acc = np.zeros_like(g0)
    P = np.eye(G.shape[0])
    for _ in range(n):
        acc += P @ r_down
        P = P @ G
    return out + acc


def martingale_value(p_index: int, x1: float, x2: int, step: int, t: float, data_or_g) -> float:
    g = data_or_g.g(x2) if isinstance(data_or_g, MartingaleData) else data_or_g(x2)
    return x1 - t * step + float(g[p_index])


def martingale_data(b: OneCounterAbstraction, D, reward: int = 1, g: GSolution | None = None,
                    tol: float = 1e-12) -> MartingaleData:
    sm = _as_float(step_matrices(b))
    g = g or solve_g_matrix(sm, tol=tol)
    n = len(b.states)
    idx = b.index
    Dk = [idx[q] for q in D]
    A = (sm.Q0 + sm.Qu @ g.G)[np.ix_(Dk, Dk)]
    if np.max(np.abs(A.sum(axis=1) - 1.0)) > 1e-8:
        raise PreconditionViolated("zero-visit chain leaks mass from D (escape to infinity)")
    mu = _stationary(A)
    S = excursion_states(sm, D)
    B = (sm.P0 + sm.Pu @ g.G + sm.Pu)[np.ix_(S, S)]
    if S and max(abs(np.linalg.eigvals(B))) >= 1 - 1e-9:
        raise PreconditionViolated("critical counter: expected return time is infinite")
    e_down = np.full(n, np.nan)
    d_down = np.zeros(n)
    if S:
        solved = np.linalg.solve(np.eye(len(S)) - B, np.column_stack([np.ones(len(S)), sm.dpos[S, reward - 1]]))
        e_down[S] = solved[:, 0]
        d_down[S] = solved[:, 1]
    ed = np.nan_to_num(e_down, nan=0.0)
    e = 1.0 + sm.Qu[Dk] @ ed
    delta1 = sm.d0[Dk, reward - 1] + sm.Qu[Dk] @ d_down
    t = float(mu @ delta1 / (mu @ e))
    r_down = np.zeros(n)
    r_down[S] = d_down[S] - t * e_down[S]
    r0 = delta1 - t * e
    e_max = 1.0 + float(np.nanmax(e_down)) if S else 1.0
    y_min = float(A[A > 0].min())
    g_bound = e_max * len(Dk) / y_min ** len(Dk)
    g0D = solve_g0(A, mu, r0, top=g_bound)
    g0 = np.zeros(n)
    g0[Dk] = g0D
    return MartingaleData(tuple(b.states), tuple(D), S, g.G, A, B, mu, e_down, e, d_down, delta1, t, r_down, r0,
                          g0, e_max, y_min, g_bound, g_bound + e_max, sm)


# --- tail constants --------------------------------------------------------------

def _log_upper_gamma(s: int, x: float) -> float:
    """log of the upper incomplete gamma function, bounded above for large x."""
    if x <= 2 * (s - 1):
        return math.log(gammaincc(s, x)) + gammaln(s)
    # t^(s-1) <= x^(s-1) exp((s-1)(t-x)/x) for t >= x
    return (s - 1) * math.log(x) - x - math.log1p(-(s - 1) / x)


def log_tail_bound(A: float, h: float) -> float:
    """log of an upper bound on sum_{l >= h} l * A^(l^(1/4)).

    Block j covers l in [j^4, (j+1)^4); there A^(l^(1/4)) <= A^j and the sum
    of l is at most 4 (j+1)^7.  With k = j+1 and f(k) = k^7 A^k unimodal,
    sum_{k >= K} f(k) <= max_{k >= K} f(k) + integral_K^inf f.
    """
    if not 0 < A < 1:
        raise ValueError("A must lie in (0, 1)")
    lam = -math.log(A)
    K = int(math.floor(h ** 0.25))
    while K ** 4 > h:
        K -= 1
    K = max(K, 0) + 1
    peak = max(K, 7 / lam)
    log_fmax = 7 * math.log(peak) - lam * peak
    log_int = _log_upper_gamma(8, lam * K) - 8 * math.log(lam)
    return math.log(4 / A) + float(np.logaddexp(log_fmax, log_int))


def tail_sum_bound(A: float, h: float) -> float:
    return math.exp(log_tail_bound(A, h))


def tail_sum_direct(A: float, h: int, stop: int) -> float:
    """Plain summation over h <= l < stop, for cross-checks on small inputs."""
    ls = np.arange(h, stop, dtype=float)
    return float(np.sum(ls * A ** (ls ** 0.25)))


@dataclass
class TailConstants:
    A: float
    h_min: int
    h0: int
    log_A0: float
    A0: float
    n: int
    tested_range: tuple
    provenance: str = "supplied"


def tail_constants(t_oc: float, c: float, bump_a: float, bump_c: float, d: int = 2, span: float = 1e3,
                   search_limit: float = 1e60, provenance: str = "supplied") -> TailConstants:
    """Find h0 and A0 with tail(h) <= A0^h on a geometric grid over [h0, span * h0].

    The tail decays like exp(-lambda h^(1/4)), so no single A0 < 1 works for
    every h; the bound is certified on ``tested_range`` only.
    """
    if not t_oc > 0:
        raise PreconditionViolated("tail constants need a positive trend")
    if not 0 < bump_a < 1:
        raise PreconditionViolated("bump constant a must lie in (0, 1)")
    A = max(bump_a ** (t_oc / c), 2 ** (-1 / 128))
    if A >= 1:
        raise PreconditionViolated("A >= 1")
    h_min = max(1, math.ceil((bump_c * c / t_oc) ** 4))
    h = float(h_min)
    while log_tail_bound(A, h) >= 0:
        h *= 1.25
        if h > search_limit:
            raise ResourceExhausted("tail bound never drops below 1 below the search limit", A=A)
    h0 = math.ceil(h)
    grid = [float(x) for x in np.geomspace(float(h0), float(h0) * span, 64)]
    logs = [log_tail_bound(A, x) for x in grid]
    log_A0 = max(v / x for v, x in zip(logs, grid))
    if log_A0 >= 0:
        raise ResourceExhausted("tail bound is not monotone on the tested range", A=A)
    n = h0
    while log_tail_bound(A, n) >= -math.log(d):
        n = math.ceil(n * 1.25)
    return TailConstants(A, h_min, h0, log_A0, math.exp(log_A0), n, (h0, grid[-1]), provenance)


def estimate_bump_constants(b: OneCounterAbstraction, D, runs: int = 20_000, seed: int = 0,
                            max_len: int = 100_000, confidence: float = 0.99) -> dict:
    """Fit P(excursion length >= k) <= a^k from simulated zero-to-zero excursions.

    Uses a one-sided Wilson upper envelope of the empirical survival function
    at level ``confidence`` and returns the smallest geometric rate that stays
    above it from k = c' on.
    """
    sm = _as_float(step_matrices(b))
    n = len(b.states)
    idx = b.index
    rng = np.random.default_rng(seed)
    zero_rows = np.hstack([sm.Q0, sm.Qu])
    pos_rows = np.hstack([sm.Pd, sm.P0, sm.Pu])
    starts = [idx[q] for q in D]
    lengths = np.empty(runs, dtype=np.int64)
    censored = 0
    for k in range(runs):
        s = starts[k % len(starts)]
        j = rng.choice(2 * n, p=zero_rows[s] / zero_rows[s].sum())
        level, s, steps = (0 if j < n else 1), j % n, 1
        while level > 0 and steps < max_len:
            j = rng.choice(3 * n, p=pos_rows[s] / pos_rows[s].sum())
            level += j // n - 1
            s = j % n
            steps += 1
        if level > 0:
            censored += 1
        lengths[k] = steps
    z = {0.95: 1.645, 0.99: 2.326, 0.999: 3.090}.get(confidence, 2.326)
    kmax = int(lengths.max())
    counts = np.bincount(lengths, minlength=kmax + 2)
    surv = counts[::-1].cumsum()[::-1] / runs  # P(E >= k)
    ks = np.arange(1, kmax + 2)
    p = surv[1: kmax + 2]
    upper = (p + z * z / (2 * runs) + z * np.sqrt(p * (1 - p) / runs + z * z / (4 * runs * runs))) / (1 + z * z / runs)
    c_prime = max(1, int(np.searchsorted(-p, -0.5)))
    sel = ks >= c_prime
    a = float(np.max(upper[sel] ** (1.0 / ks[sel])))
    return {"a": min(a, 1 - 1e-12), "c_prime": c_prime, "runs": runs, "censored": censored,
            "max_length": kmax, "provenance": "estimated", "confidence": confidence}
