"""Deterministic Monte Carlo simulation of pMC runs.

Every run is a pure function of (model, start, seed, run index); see
``_kernels`` for the random stream and the exact integer sampling rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .model import (TAU, Config, CounterOverflow, Criterion, ModelError, Pmc, all_subsets, make_config, mask_of,
                    zero_set)


@dataclass
class SimTables:
    """Flattened per-(state, zero mask) rule tables shared by both backends."""
    states: list
    rules: list  # model rules; index len(rules) is the implicit tau step
    d: int
    tab_off: np.ndarray
    cum: np.ndarray
    total: np.ndarray
    ent_rule: np.ndarray
    ent_dst: np.ndarray
    ent_delta: np.ndarray

    @property
    def labels(self) -> list[str]:
        return [r.shown_label for r in self.rules] + [TAU]


_TABLE_CACHE: dict[int, SimTables] = {}


def build_tables(pmc: Pmc) -> SimTables:
    key = id(pmc)
    hit = _TABLE_CACHE.get(key)
    if hit is not None and hit.rules == list(pmc.rules):
        return hit
    d = pmc.dimension
    if d > 20:
        raise ModelError("the simulator supports at most 20 counters")
    states = list(pmc.states)
    sidx = {q: k for k, q in enumerate(states)}
    rules = list(pmc.rules)
    ridx = {id(r): k for k, r in enumerate(rules)}
    tab_off = [0]
    cum, total, ent_rule, ent_dst, ent_delta = [], [], [], [], []
    subsets = {mask_of(s): s for s in all_subsets(d)}
    for q in states:
        for m in range(1 << d):
            rs = pmc.rules_for(q, subsets[m])
            if rs:
                acc = 0
                for r in rs:
                    acc += r.weight
                    cum.append(acc)
                    ent_rule.append(ridx[id(r)])
                    ent_dst.append(sidx[r.dst])
                    ent_delta.append(r.delta)
                if acc >= 2**63:
                    raise ModelError(f"total weight at state {q!r} does not fit in 63 bits")
                total.append(acc)
            else:
                cum.append(1)
                ent_rule.append(len(rules))
                ent_dst.append(sidx[q])
                ent_delta.append((0,) * d)
                total.append(1)
            tab_off.append(len(cum))
    t = SimTables(states, rules, d, np.array(tab_off, dtype=np.int64), np.array(cum, dtype=np.uint64),
                  np.array(total, dtype=np.uint64), np.array(ent_rule, dtype=np.int64),
                  np.array(ent_dst, dtype=np.int64), np.array(ent_delta, dtype=np.int64).reshape(len(cum), d))
    _TABLE_CACHE[key] = t
    return t


@dataclass
class RunOutcome:
    stopped_at: int | None
    final: Config
    fired: dict  # rule index (len(rules) for tau) -> count
    steps: int
    trace: list[Config] | None = None


@dataclass
class BatchOutcome:
    stopped_at: np.ndarray  # -1 where the run did not stop
    final_state: np.ndarray
    final_counters: np.ndarray
    fired: np.ndarray
    steps: np.ndarray
    tables: SimTables
    trace: np.ndarray | None = None

    def outcome(self, k: int) -> RunOutcome:
        t = self.tables
        tr = None
        if self.trace is not None:
            n = int(self.steps[k])
            tr = [Config(t.states[int(row[0])], tuple(int(v) for v in row[1:])) for row in self.trace[k, : n + 1]]
        return RunOutcome(None if self.stopped_at[k] < 0 else int(self.stopped_at[k]),
                          Config(t.states[int(self.final_state[k])], tuple(int(v) for v in self.final_counters[k])),
                          {j: int(c) for j, c in enumerate(self.fired[k]) if c}, int(self.steps[k]), tr)


def _stop_masks(z: Criterion | None) -> np.ndarray:
    if z is None:
        return np.zeros(0, dtype=np.int64)
    return np.array(sorted(mask_of(s) for s in z), dtype=np.int64)


def simulate_batch(pmc: Pmc, start: Config, z: Criterion | None, max_steps: int, seed: int, runs: Sequence[int] | int,
                   record: bool = False, backend: str | None = None) -> BatchOutcome:
    if max_steps < 0:
        raise ValueError("max_steps must be non-negative")
    t = build_tables(pmc)
    start = make_config(start.state, start.counters)
    if len(start.counters) != t.d:
        raise ModelError("start configuration has the wrong dimension")
    run_ids = np.arange(runs, dtype=np.int64) if isinstance(runs, int) else np.asarray(runs, dtype=np.int64)
    keys = _kernels.run_keys(seed, run_ids)
    trace = np.zeros((len(run_ids), max_steps + 1, t.d + 1) if record else (0, 0, 0), dtype=np.int64)
    sidx = {q: k for k, q in enumerate(t.states)}
    out = _kernels.simulate(t.tab_off, t.cum, t.total, t.ent_rule, t.ent_dst, t.ent_delta, len(t.rules), t.d,
                            _stop_masks(z), sidx[start.state], np.array(start.counters, dtype=np.int64), keys,
                            int(max_steps), trace, backend=backend)
    stopped_at, state, ctr, fired, steps, status = out
    if status == _kernels.OVERFLOW:
        raise CounterOverflow("a counter left the 63-bit range during simulation")
    return BatchOutcome(stopped_at, state, ctr, fired, steps, t, trace if record else None)


def simulate_run(pmc: Pmc, start: Config, z: Criterion | None, max_steps: int, seed: int, run_index: int = 0,
                 record: bool = False, backend: str | None = None) -> RunOutcome:
    batch = simulate_batch(pmc, start, z, max_steps, seed, [run_index], record=record, backend=backend)
    return batch.outcome(0)


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    p = successes / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class Estimate:
    estimate: float
    ci: tuple[float, float]
    runs: int
    stopped: int
    censored: int

    @property
    def sigma(self) -> float:
        p = self.estimate
        return math.sqrt(max(p * (1 - p), 0.0) / self.runs)


def estimate_probability(pmc: Pmc, start: Config, z: Criterion, max_steps: int, runs: int, seed: int,
                         backend: str | None = None) -> Estimate:
    """Fraction of runs stopped by ``z`` within ``max_steps``; unstopped runs count as censored."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    b = simulate_batch(pmc, start, z, max_steps, seed, runs, backend=backend)
    hits = int(np.count_nonzero(b.stopped_at >= 0))
    if runs == 1:
        ci = (0.0, 1.0)
    else:
        ci = wilson_interval(hits, runs)
    return Estimate(hits / runs, ci, runs, hits, runs - hits)


def transition_frequencies(pmc: Pmc, start: Config, steps: int, runs: int, seed: int,
                           backend: str | None = None) -> tuple[np.ndarray, list[str]]:
    """Per-run fired counts divided by ``steps``; columns follow ``pmc.rules`` plus tau."""
    b = simulate_batch(pmc, start, None, steps, seed, runs, backend=backend)
    return b.fired / max(steps, 1), b.tables.labels


def first_hit_counts(pmc: Pmc, start: Config, z: Criterion, max_steps: int, runs: int, seed: int,
                     backend: str | None = None) -> np.ndarray:
    """Histogram of stopping steps (index max_steps + 1 collects unstopped runs)."""
    b = simulate_batch(pmc, start, z, max_steps, seed, runs, backend=backend)
    s = np.where(b.stopped_at >= 0, b.stopped_at, max_steps + 1)
    return np.bincount(s, minlength=max_steps + 2)


@dataclass
class ProjectedRun:
    states: list
    counter: list[int]
    rewards: list[tuple[int, ...]]  # reward of step k -> k+1


def project_run(run: Sequence[Config], i: int) -> ProjectedRun:
    """Map a safe run to the one-counter run that keeps counter ``i`` exact.

    Raises ModelError when a configuration other than the last has some
    counter j != i at zero.
    """
    if not run:
        return ProjectedRun([], [], [])
    d = len(run[0].counters)
    if not 1 <= i <= d:
        raise ModelError(f"counter {i} out of range")
    for c in run[:-1]:
        if zero_set(c) - {i}:
            raise ModelError(f"run is not safe: {c} has a zero counter other than {i}")
    states = [c.state for c in run]
    counter = [c.counters[i - 1] for c in run]
    rewards = []
    for a, b in zip(run, run[1:]):
        delta = tuple(y - x for x, y in zip(a.counters, b.counters))
        rewards.append(delta[: i - 1] + delta[i:])
    return ProjectedRun(states, counter, rewards)


def check_projection(run: Sequence[Config], proj: ProjectedRun, i: int) -> bool:
    """State, counter and reward-reconstruction identities between a run and its projection."""
    if len(run) != len(proj.states):
        return False
    others = [c.counters[: i - 1] + c.counters[i:] for c in run]
    acc = others[0] if run else ()
    for k, c in enumerate(run):
        if c.state != proj.states[k] or c.counters[i - 1] != proj.counter[k] or tuple(acc) != others[k]:
            return False
        if k < len(proj.rewards):
            acc = tuple(x + y for x, y in zip(acc, proj.rewards[k]))
    return True
