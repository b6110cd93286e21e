import math
import random
from fractions import Fraction

import pytest

from conftest import walk
from oracles import INF, botfin_bruteforce, random_pmc
from pmcreach.case1 import (analyze_bscc, approx_case1, botfin, bottom_components, bscc_trend, build_floor_chain,
                            classify_divergence, divergence_constants, escape_bound, qualitative_case1)
from pmcreach.model import Config, Pmc, PreconditionViolated, Rule, is_safe_prefix, z_all

E = frozenset()


def _single(d, *rules):
    return Pmc(d, ("q",), tuple(Rule("q", delta, E, w, "q") for delta, w in rules))


# --- floor chain ---------------------------------------------------------------------

def _row(floor, q):
    ch = floor.chain
    return {ch.nodes[j]: p for j, p in ch.rows[ch.index[q]]}


def test_floor_chain_fig1(fig1):
    f = build_floor_chain(fig1)
    assert _row(f, "s") == {"s": 1}
    assert bottom_components(f) == [("s",)]


def test_floor_chain_pads_states_without_empty_rules():
    pmc = Pmc(1, ("q",), (Rule("q", (1,), frozenset([1]), 1, "q"),))
    f = build_floor_chain(pmc)
    assert _row(f, "q") == {"q": 1}
    assert f.padded == {"q"}


def test_floor_chain_normalizes():
    pmc = Pmc(1, ("q", "r"), (Rule("q", (0,), E, 1, "r"), Rule("q", (0,), E, 3, "q"), Rule("r", (0,), E, 1, "r")))
    f = build_floor_chain(pmc)
    assert _row(f, "q") == {"r": Fraction(1, 4), "q": Fraction(3, 4)}
    assert all(f.chain.row_sum(k) == 1 for k in range(len(f.chain)))


# --- trends --------------------------------------------------------------------------

def test_trend_fig1(fig1):
    an = bscc_trend(fig1, ("s",))
    assert an.trend == (Fraction(-89, 122), Fraction(-89, 122))


def test_trend_simple_walks():
    assert bscc_trend(walk(2, 1), ("q",)).trend == (Fraction(1, 3),)
    assert bscc_trend(walk(1, 1), ("q",)).trend == (0,)


def test_trend_identity_random():
    rng = random.Random(4)
    for _ in range(30):
        pmc = random_pmc(rng, rng.randint(1, 4), rng.randint(1, 3), rng.randint(3, 8), zero_rules=False)
        f = build_floor_chain(pmc)
        for comp in bottom_components(f):
            an = bscc_trend(pmc, comp, f)
            assert sum(an.mu.values()) == 1
            for j in range(pmc.dimension):
                assert an.trend[j] == sum(an.mu[q] * an.change[q][j] for q in comp)


# --- botfin --------------------------------------------------------------------------

def test_botfin_increment_only():
    assert botfin(_single(1, ((1,), 1)), ("q",), 1) == {"q": 1}


def test_botfin_decrement_available():
    assert botfin(_single(1, ((1,), 1), ((-1,), 1)), ("q",), 1) == {"q": INF}


def test_botfin_joint_decrement():
    # any level of counter 1 can be emptied while counter 2 is large
    pmc = Pmc(2, ("q",), (Rule("q", (-1, -1), E, 1, "q"), Rule("q", (0, 0), frozenset([2]), 1, "q")))
    assert botfin(pmc, ("q",), 1) == {"q": INF}


def test_botfin_two_state_corpus_model():
    from conftest import load
    pmc = load("botfin2.pmc")
    assert botfin(pmc, ("p", "q"), 1) == {"p": 2, "q": 1}


def test_botfin_matches_enumeration():
    rng = random.Random(8)
    finite = checked = 0
    while checked < 100:
        n = rng.randint(1, 5)
        d = rng.randint(1, 2)
        pmc = random_pmc(rng, n, d, rng.randint(n, 2 * n + 2), zero_rules=False)
        f = build_floor_chain(pmc)
        for comp in bottom_components(f):
            for i in range(1, d + 1):
                got = botfin(pmc, comp, i, f)
                assert got == botfin_bruteforce(pmc, comp, i)
                for v in got.values():
                    if v != INF:
                        finite += 1
                        assert v <= len(comp)
                checked += 1
    assert finite > 20


# --- divergence ----------------------------------------------------------------------

def test_classify_by_trend():
    assert classify_divergence(analyze_bscc(walk(2, 1), ("q",))) == (True,)
    assert classify_divergence(analyze_bscc(walk(1, 2), ("q",))) == (False,)


def test_classify_zero_trend():
    assert classify_divergence(analyze_bscc(walk(1, 1), ("q",))) == (False,)
    cycle = Pmc(1, ("p", "q"), (Rule("p", (1,), E, 1, "q"), Rule("q", (-1,), E, 1, "p")))
    an = analyze_bscc(cycle, ("p", "q"))
    assert an.trend == (0,) and an.botfin[1] == {"p": 1, "q": 2}
    assert an.diverging == (True,)


def test_escape_bound_values():
    assert escape_bound(walk(1, 1), 3) == Fraction(1, 8)
    assert escape_bound(walk(1, 1), 0) == 1
    two = Pmc(1, ("p", "q"), (Rule("p", (0,), E, 1, "q"), Rule("p", (0,), E, 2, "p"),
                              Rule("q", (0,), E, 1, "p"), Rule("q", (0,), E, 2, "q")))
    assert two.min_probability == Fraction(1, 3)
    assert escape_bound(two, 4) == Fraction(64, 81)


def test_divergence_constants_walk():
    dc = divergence_constants(walk(2, 1), ("q",), 1e-3)
    assert dc.delta == 6
    assert dc.a == pytest.approx(math.exp(-1 / 3872), rel=1e-15)
    assert dc.threshold == 36
    a = math.exp(-1 / 3872)
    assert dc.K == math.ceil(math.log(1000) / ((1 - a) * math.log(1 / a))) + 1


def test_divergence_constants_faster_trend_shrinks_a():
    slow = divergence_constants(walk(2, 1), ("q",), 1e-3)
    fast = divergence_constants(_single(1, ((1,), 2), ((0,), 1)), ("q",), 1e-3)
    assert fast.delta == slow.delta and fast.trend == 2 * slow.trend
    assert fast.a < slow.a


def test_divergence_constants_need_positive_trend():
    with pytest.raises(PreconditionViolated):
        divergence_constants(walk(1, 2), ("q",), 1e-3)


# --- qualitative ---------------------------------------------------------------------

def test_qualitative_fig1(fig1):
    assert qualitative_case1(fig1, Config("s", (1, 1))).almost_sure


def test_qualitative_gambler(gambler_up, gambler_down):
    up = qualitative_case1(gambler_up, Config("q", (1,)))
    assert not up.almost_sure
    path = [Config(s, tuple(c)) for s, c in up.witness["path"]]
    assert is_safe_prefix(gambler_up, path, z_all(1))
    assert qualitative_case1(gambler_down, Config("q", (1,))).almost_sure


def test_qualitative_zero_start(gambler_up):
    assert qualitative_case1(gambler_up, Config("q", (0,))).almost_sure


def test_qualitative_needs_reachable_cover():
    # the diverging component r can only be entered with counter 2 at zero
    pmc = Pmc(2, ("p", "r"), (Rule("p", (0, -1), E, 1, "p"), Rule("p", (0, 0), frozenset([2]), 1, "r"),
                              Rule("r", (1, 1), E, 1, "r")))
    assert qualitative_case1(pmc, Config("p", (1, 3))).almost_sure
    assert not qualitative_case1(pmc, Config("r", (1, 1))).almost_sure


# --- approximation -------------------------------------------------------------------

@pytest.mark.parametrize("k", [1, 2, 3])
def test_approx_gambler_matches_ruin(gambler_up, k):
    res = approx_case1(gambler_up, Config("q", (k,)), 1e-4)
    assert abs(float(res.nu) - 0.5**k) <= 1e-4


def test_approx_short_circuits(gambler_down, fig1):
    assert approx_case1(gambler_down, Config("q", (1,)), 1e-3).nu == 1
    assert approx_case1(fig1, Config("s", (1, 1)), 1e-2).nu == 1


def test_approx_transient_start():
    # p either empties the counter at once or moves into the gambler component
    pmc = Pmc(1, ("p", "q"), (Rule("p", (-1,), E, 1, "p"), Rule("p", (0,), E, 1, "q"),
                              Rule("q", (1,), E, 2, "q"), Rule("q", (-1,), E, 1, "q")))
    res = approx_case1(pmc, Config("p", (1,)), 1e-3)
    assert abs(float(res.nu) - 0.75) <= 1e-3


def test_approx_halving_eps_is_consistent(gambler_up):
    for eps in (1e-2, 1e-3):
        a = float(approx_case1(gambler_up, Config("q", (2,)), eps).nu)
        b = float(approx_case1(gambler_up, Config("q", (2,)), eps / 2).nu)
        assert abs(a - b) <= 1.5 * eps


def test_approx_rejects_bad_eps(gambler_up):
    with pytest.raises(PreconditionViolated):
        approx_case1(gambler_up, Config("q", (1,)), 0.0)
