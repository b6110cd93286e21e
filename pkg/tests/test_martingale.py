import math
import random

import numpy as np
import pytest

from oracles import martingale_drift, random_martingale_instances
from pmcreach.case2 import OcRule, OneCounterAbstraction
from pmcreach.martingale import (estimate_bump_constants, g_at, g_closed_form, log_tail_bound, martingale_data,
                                 martingale_value, solve_g0, tail_constants, tail_sum_bound, tail_sum_direct)
from pmcreach.model import PreconditionViolated, ResourceExhausted

# values of m above this size cannot be resolved to 1e-9 in double precision
RESOLVABLE = 1e6


def walk(up, down, reward=0):
    rules = [OcRule("q", 1, False, up, "q", (reward,)), OcRule("q", -1, False, down, "q", (reward,)),
             OcRule("q", 1, True, 1, "q", (reward,))]
    return OneCounterAbstraction(("q",), tuple(rules), 1)


def two_state():
    # p at zero moves up into r; r walks down-biased and returns to p or q at zero
    rules = [OcRule("p", 1, True, 1, "r", (1,)), OcRule("q", 0, True, 1, "p", (-1,)),
             OcRule("r", -1, False, 2, "q", (0,)), OcRule("r", 1, False, 1, "r", (1,)),
             OcRule("r", 0, True, 1, "p", (0,)), OcRule("p", -1, False, 1, "p", (0,)),
             OcRule("q", -1, False, 1, "q", (0,))]
    return OneCounterAbstraction(("p", "q", "r"), tuple(rules), 1)


# --- g(0) --------------------------------------------------------------------------

def test_single_state_component():
    data = martingale_data(walk(1, 2), ["q"])
    assert data.r0 == pytest.approx([0.0])
    assert data.e_max == pytest.approx(4.0)
    assert data.g0[0] == pytest.approx(data.e_max)


def test_swap_cycle_difference():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    mu = np.array([0.5, 0.5])
    g0 = solve_g0(A, mu, np.array([1.5, -1.5]))
    assert g0[0] - g0[1] == pytest.approx(1.5, abs=1e-12)
    shifted = solve_g0(A, mu, np.array([1.5, -1.5]), top=10.0)
    assert shifted.max() == pytest.approx(10.0) and shifted[0] - shifted[1] == pytest.approx(1.5)


def test_solve_g0_rejects_unbalanced_reward():
    with pytest.raises(PreconditionViolated):
        solve_g0(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.5, 0.5]), np.array([1.0, 0.0]))


def test_two_state_instance():
    b = two_state()
    data = martingale_data(b, ["p", "q"])
    Dk = [b.index[q] for q in data.D]
    g0 = data.g0[Dk]
    assert np.max(np.abs(g0 - data.r0 - data.A @ g0)) <= 1e-9
    assert abs(float(data.mu @ data.r0)) <= 1e-10
    assert 0 <= g0.min() and g0.max() <= data.g_bound + 1e-9


# --- g(n) --------------------------------------------------------------------------

def test_g_at_base_and_linear():
    g0 = np.array([2.5])
    assert np.array_equal(g_at(g0, np.eye(1), np.array([0.75]), 0), g0)
    assert g_at(g0, np.eye(1), np.array([0.75]), 8)[0] == pytest.approx(2.5 + 8 * 0.75)
    with pytest.raises(ValueError):
        g_at(g0, np.eye(1), np.array([0.0]), -1)


def test_g_recursion_matches_closed_form():
    rng = np.random.default_rng(1)
    for _ in range(5):
        G = rng.random((3, 3))
        G /= G.sum(axis=1, keepdims=True) * 1.1
        g0, r = rng.normal(size=3), rng.normal(size=3)
        for n in (1, 5, 17):
            assert np.max(np.abs(g_at(g0, G, r, n) - g_closed_form(g0, G, r, n))) <= 1e-9


def test_martingale_value():
    data = martingale_data(two_state(), ["p", "q"])
    p = 0
    assert martingale_value(p, 7.0, 0, 0, data.t, data) == pytest.approx(7.0 + data.g0[p])
    assert martingale_value(p, 1.0, 3, 5, 0.0, data) == martingale_value(p, 1.0, 3, 11, 0.0, data)
    m = martingale_value(2, 4.0, 2, 3, data.t, data)
    assert m == pytest.approx(4.0 - 3 * data.t + data.g(2)[2])


def test_zero_drift_small_instances():
    for b, data in random_martingale_instances(random.Random(21), 20):
        if data.g_bound <= RESOLVABLE:
            assert martingale_drift(b, data, levels=12) <= 1e-9


def test_zero_drift_large_constants_to_float_resolution():
    # with a huge normalizing shift the drift is checked relative to the size of m
    seen = 0
    for b, data in random_martingale_instances(random.Random(7), 200):
        if data.g_bound > RESOLVABLE:
            seen += 1
            assert martingale_drift(b, data, levels=12) <= 64 * np.finfo(float).eps * data.c
    assert seen > 0


def test_potential_bounds_random():
    for b, data in random_martingale_instances(random.Random(3), 30):
        Dk = [b.index[q] for q in data.D]
        assert abs(float(data.mu @ data.r0)) <= 1e-10
        assert data.g0[Dk].min() >= -1e-9 and data.g0[Dk].max() <= data.g_bound * (1 + 1e-12)
        keep = Dk + list(data.S)
        for n in range(21):
            assert np.max(np.abs(data.g(n)[keep])) <= data.g_bound + n * data.e_max + 1e-6


def test_critical_counter_rejected():
    with pytest.raises(PreconditionViolated, match="critical"):
        martingale_data(walk(1, 1), ["q"])


# --- tail constants ----------------------------------------------------------------

def test_tail_bound_dominates_partial_sums():
    for h in (256, 1000, 5000):
        direct = tail_sum_direct(0.5, h, 4_000_000)
        assert direct <= tail_sum_bound(0.5, h)
    bounds = [log_tail_bound(0.5, h) for h in (256, 512, 1024, 4096, 10**5)]
    # flat until the block sum passes its peak, strictly decreasing after
    assert all(a >= b for a, b in zip(bounds, bounds[1:]))
    assert bounds[-1] < bounds[0]


def test_tail_constants_basic():
    tc = tail_constants(0.5, 1.0, 0.5, 1.0)
    assert 0 < tc.A0 < 1 or (tc.A0 == 1.0 and tc.log_A0 < 0)
    assert tc.log_A0 < 0
    lo, hi = tc.tested_range
    for h in np.geomspace(lo, hi, 9):
        assert log_tail_bound(tc.A, h) <= tc.log_A0 * h + 1e-9
    assert log_tail_bound(tc.A, tc.n) < -math.log(2)


def test_doubling_trend_does_not_raise_A():
    for c in (1.0, 5.0, 40.0):
        a = tail_constants(0.3, c, 0.2, 1.0)
        b = tail_constants(0.6, c, 0.2, 1.0)
        assert b.A <= a.A


def test_tail_constants_guards():
    with pytest.raises(PreconditionViolated):
        tail_constants(0.0, 1.0, 0.5, 1.0)
    with pytest.raises(PreconditionViolated):
        tail_constants(0.5, 1.0, 1.0, 1.0)
    with pytest.raises(ResourceExhausted):
        tail_constants(0.5, 1.0, 1 - 1e-15, 1.0)


def test_bump_constants_are_estimated():
    est = estimate_bump_constants(walk(1, 2), ["q"], runs=2000, seed=4)
    assert est["provenance"] == "estimated"
    assert 0 < est["a"] < 1 and est["c_prime"] >= 1
    assert est["censored"] == 0
