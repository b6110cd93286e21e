"""Probabilistic multi-counter automata: data model and one-step semantics.

Counter indices are 1-based wherever they appear as values (zero-test sets,
stopping criteria, the ``i`` argument of projections).  Counter vectors are
plain tuples, so position ``k`` holds counter ``k + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import combinations
from typing import Hashable, Iterable, NamedTuple, Sequence

TAU = "τ"
COUNTER_LIMIT = 2**63 - 1


class ModelError(ValueError):
    """A model violates a structural invariant."""


class CounterOverflow(ArithmeticError):
    pass


class PreconditionViolated(ValueError):
    """An analysis was asked for outside the domain where it is defined."""


class ResourceExhausted(RuntimeError):
    """A configured search or size budget ran out before an answer was found."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


@dataclass(frozen=True)
class Rule:
    src: Hashable
    delta: tuple[int, ...]
    zero_test: frozenset[int]
    weight: int
    dst: Hashable
    label: str | None = None

    @property
    def shown_label(self) -> str:
        return TAU if self.label is None else self.label


class Config(NamedTuple):
    state: Hashable
    counters: tuple[int, ...]


def all_subsets(d: int) -> list[frozenset[int]]:
    """Every subset of {1..d}, ordered by bitmask."""
    out = []
    for mask in range(1 << d):
        out.append(frozenset(k + 1 for k in range(d) if mask >> k & 1))
    return out


def mask_of(s: Iterable[int]) -> int:
    m = 0
    for k in s:
        m |= 1 << (k - 1)
    return m


@dataclass(frozen=True)
class Pmc:
    dimension: int
    states: tuple
    rules: tuple[Rule, ...]
    kind: str = "general"
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        d = self.dimension
        if not isinstance(d, int) or d < 0:
            raise ModelError(f"dimension must be a natural number, got {d!r}")
        if self.kind not in ("general", "pvass"):
            raise ModelError(f"unknown model kind {self.kind!r}")
        if len(set(self.states)) != len(self.states):
            raise ModelError("duplicate state identifiers")
        known = set(self.states)
        for r in self.rules:
            if len(r.delta) != d:
                raise ModelError(f"rule {r.src}->{r.dst}: delta has length {len(r.delta)}, expected {d}")
            if any(x not in (-1, 0, 1) for x in r.delta):
                raise ModelError(f"rule {r.src}->{r.dst}: delta entries must lie in {{-1,0,1}}")
            if any(not 1 <= k <= d for k in r.zero_test):
                raise ModelError(f"rule {r.src}->{r.dst}: zero-test index out of range")
            if not isinstance(r.weight, int) or r.weight <= 0:
                raise ModelError(f"rule {r.src}->{r.dst}: weight must be a positive integer")
            if r.src not in known or r.dst not in known:
                raise ModelError(f"rule {r.src}->{r.dst} mentions an undeclared state")
        if self.kind == "pvass":
            self._check_pvass()

    def _check_pvass(self):
        groups: dict[tuple, dict[frozenset, int]] = {}
        for r in self.rules:
            key = (r.src, r.delta, r.dst, r.label)
            groups.setdefault(key, {})
            groups[key][r.zero_test] = groups[key].get(r.zero_test, 0) + r.weight
        for key, by_test in groups.items():
            weights = {by_test.get(c) for c in all_subsets(self.dimension)}
            if len(weights) != 1 or None in weights:
                raise ModelError(f"pvass model: rule {key[0]}->{key[2]} is not replicated over all zero tests")

    @cached_property
    def _by_state_and_test(self) -> dict[tuple, list[Rule]]:
        table: dict[tuple, list[Rule]] = {}
        for r in self.rules:
            table.setdefault((r.src, r.zero_test), []).append(r)
        return table

    def rules_for(self, state, zero_test: frozenset[int]) -> list[Rule]:
        return self._by_state_and_test.get((state, frozenset(zero_test)), [])

    @cached_property
    def state_index(self) -> dict:
        return {q: k for k, q in enumerate(self.states)}

    def empty_rules(self, state) -> list[Rule]:
        """The rules that can fire while every counter is positive."""
        return self.rules_for(state, frozenset())

    @cached_property
    def min_probability(self) -> Fraction:
        """Smallest positive one-step probability over all zero-test classes."""
        best = Fraction(1)
        for q in self.states:
            for c in all_subsets(self.dimension):
                rs = [r for r in self.rules_for(q, c) if not any(r.delta[k - 1] < 0 for k in c)]
                if not rs:
                    continue
                tot = sum(r.weight for r in rs)
                best = min(best, min(Fraction(r.weight, tot) for r in rs))
        return best


def make_config(state, counters: Sequence[int]) -> Config:
    cs = tuple(int(x) for x in counters)
    if any(x < 0 for x in cs):
        raise ModelError("counter values must be non-negative")
    if any(x > COUNTER_LIMIT for x in cs):
        raise CounterOverflow("counter value exceeds 64-bit range")
    return Config(state, cs)


def zero_set(cfg: Config) -> frozenset[int]:
    return frozenset(k + 1 for k, x in enumerate(cfg.counters) if x == 0)


def enabled_rules(pmc: Pmc, cfg: Config) -> list[Rule]:
    z = zero_set(cfg)
    return [r for r in pmc.rules_for(cfg.state, z) if not any(r.delta[k - 1] < 0 for k in z)]


def apply_delta(counters: tuple[int, ...], delta: tuple[int, ...]) -> tuple[int, ...]:
    out = tuple(x + y for x, y in zip(counters, delta))
    if any(x > COUNTER_LIMIT for x in out):
        raise CounterOverflow("counter overflow while applying a rule")
    if any(x < 0 for x in out):
        raise ModelError("rule would make a counter negative")
    return out


def transition_distribution(pmc: Pmc, cfg: Config) -> list[tuple[str, Config, Fraction]]:
    rs = enabled_rules(pmc, cfg)
    if not rs:
        return [(TAU, cfg, Fraction(1))]
    total = sum(r.weight for r in rs)
    return [(r.shown_label, Config(r.dst, apply_delta(cfg.counters, r.delta)), Fraction(r.weight, total)) for r in rs]


# --- stopping criteria ---------------------------------------------------------

Criterion = frozenset  # of frozenset[int]


def make_criterion(sets: Iterable[Iterable[int]], d: int) -> Criterion:
    z = frozenset(frozenset(s) for s in sets)
    if not z:
        raise ModelError("a stopping criterion needs at least one member")
    for s in z:
        if not s:
            raise ModelError("stopping-criterion members must be non-empty")
        if any(not 1 <= k <= d for k in s):
            raise ModelError("stopping-criterion member mentions a counter out of range")
    for a, b in combinations(z, 2):
        if a <= b or b <= a:
            raise ModelError(f"stopping-criterion members {sorted(a)} and {sorted(b)} are comparable")
    return z


def z_all(d: int) -> Criterion:
    return frozenset(frozenset([k]) for k in range(1, d + 1))


def z_minus(d: int, i: int) -> Criterion:
    return frozenset(frozenset([k]) for k in range(1, d + 1) if k != i)


@dataclass(frozen=True)
class CriterionClass:
    kind: str  # "case1", "case2" or "undecidable"
    counter: int | None = None
    reason: str | None = None


def classify_criterion(d: int, z: Criterion) -> CriterionClass:
    z = make_criterion(z, d)
    if any(len(s) >= 2 for s in z):
        return CriterionClass("undecidable", reason="a")
    touched = set().union(*z)
    untouched = [k for k in range(1, d + 1) if k not in touched]
    if len(untouched) >= 2:
        return CriterionClass("undecidable", reason="b")
    if not untouched:
        return CriterionClass("case1")
    return CriterionClass("case2", counter=untouched[0])


def is_stopped(cfg: Config, z: Criterion | None) -> bool:
    if z is None:
        return False
    zs = zero_set(cfg)
    return any(s <= zs for s in z)


def is_safe_prefix(pmc: Pmc, path: Sequence[Config], z: Criterion) -> bool:
    for a, b in zip(path, path[1:]):
        if not any(c == b for _, c, _ in transition_distribution(pmc, a)):
            raise ModelError(f"path is disconnected between {a} and {b}")
    return not any(is_stopped(c, z) for c in path[:-1])


# --- structural transformations -------------------------------------------------

def forget_counter(pmc: Pmc, i: int) -> Pmc:
    """Drop counter ``i`` as if it held an unbounded value.

    Rules that test counter ``i`` for zero can then never fire and are removed;
    rules that become identical after projection are merged with summed weight.
    """
    d = pmc.dimension
    if d < 2:
        raise PreconditionViolated("forgetting a counter needs dimension >= 2")
    if not 1 <= i <= d:
        raise PreconditionViolated(f"counter {i} out of range")
    merged: dict[tuple, int] = {}
    labels: dict[tuple, str | None] = {}
    for r in pmc.rules:
        if i in r.zero_test:
            continue
        delta = r.delta[: i - 1] + r.delta[i:]
        test = frozenset(k if k < i else k - 1 for k in r.zero_test)
        key = (r.src, delta, test, r.dst)
        if key in merged:
            merged[key] += r.weight
            if labels[key] != r.label:
                labels[key] = None
        else:
            merged[key] = r.weight
            labels[key] = r.label
    rules = tuple(Rule(s, dl, t, w, q, labels[(s, dl, t, q)]) for (s, dl, t, q), w in merged.items())
    return Pmc(d - 1, pmc.states, rules, pmc.kind)


def pvass_rules(src, delta, weight, dst, label=None) -> list[Rule]:
    """The 2^d copies of a rule that ignores zero tests."""
    return [Rule(src, tuple(delta), c, weight, dst, label) for c in all_subsets(len(delta))]
