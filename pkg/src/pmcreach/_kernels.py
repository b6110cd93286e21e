"""Hot loops of the simulator: a numba kernel and a vectorized numpy twin.

Both consume the same random stream and make the same choices, so results do
not depend on which backend ran.  Setting PMCREACH_DISABLE_NUMBA=1 selects the
numpy path.

Random stream (splitmix64 finalizer ``mix``, constants modulo 2^64):
    key(seed, run) = mix(mix(seed) + (run + 1) * GAMMA)
    draw n        = mix(key + (n + 1) * GAMMA)
A rule is picked from integer weights with total W by taking the first
accepted draw r < 2^64 - (2^64 mod W) and locating r mod W in the cumulative
weights.
"""

from __future__ import annotations

import os

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)

# status codes returned by the kernels
OK = 0
OVERFLOW = 1

LIMIT = np.int64(2**63 - 1)


def numba_disabled() -> bool:
    return os.environ.get("PMCREACH_DISABLE_NUMBA", "").strip() not in ("", "0")


def _mix_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * M1
    z = (z ^ (z >> np.uint64(27))) * M2
    return z ^ (z >> np.uint64(31))


def run_keys(seed: int, runs: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        base = _mix_np(np.array([seed % 2**64], dtype=np.uint64))[0]
        return _mix_np(base + (runs.astype(np.uint64) + np.uint64(1)) * GAMMA)


def draw(keys: np.ndarray, n: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return _mix_np(keys + (n.astype(np.uint64) + np.uint64(1)) * GAMMA)


# --- numpy backend -------------------------------------------------------------

def simulate_numpy(tab_off, cum, total, ent_rule, ent_dst, ent_delta, n_rules, d, stop_masks,
                   start_state, start_counters, keys, max_steps, trace):
    """Advance all runs in lock-step; returns the same arrays as the numba kernel."""
    R = keys.shape[0]
    state = np.full(R, start_state, dtype=np.int64)
    ctr = np.tile(np.asarray(start_counters, dtype=np.int64), (R, 1))
    fired = np.zeros((R, n_rules + 1), dtype=np.int64)
    stopped_at = np.full(R, -1, dtype=np.int64)
    steps = np.zeros(R, dtype=np.int64)
    ndraw = np.zeros(R, dtype=np.int64)
    status = OK
    bits = (np.int64(1) << np.arange(d, dtype=np.int64)) if d else np.zeros(0, dtype=np.int64)
    recording = trace.shape[0] > 0
    if recording:
        trace[:, 0, 0] = state
        trace[:, 0, 1:] = ctr
    # pad cumulative weights per table for vectorized lookup
    ntab = tab_off.shape[0] - 1
    width = int(np.max(tab_off[1:] - tab_off[:-1])) if ntab else 1
    pad = np.full((ntab, width), ALL_ONES, dtype=np.uint64)
    for t in range(ntab):
        seg = cum[tab_off[t]:tab_off[t + 1]]
        pad[t, : seg.shape[0]] = seg
    active = np.arange(R)
    for step in range(max_steps + 1):
        if active.size == 0:
            break
        zm = ((ctr[active] == 0) * bits).sum(axis=1) if d else np.zeros(active.size, dtype=np.int64)
        hit = np.zeros(active.size, dtype=bool)
        for m in stop_masks:
            hit |= (zm & m) == m
        if hit.any():
            stopped_at[active[hit]] = step
            active, zm = active[~hit], zm[~hit]
        if step == max_steps or active.size == 0:
            break
        tab = state[active] * (1 << d) + zm
        W = total[tab]
        rem = (np.uint64(0) - W) % W
        bound = ALL_ONES - rem  # accept r <= bound when rem > 0
        r = draw(keys[active], ndraw[active])
        ndraw[active] += 1
        bad = (rem != 0) & (r > bound)
        while bad.any():
            idx = np.nonzero(bad)[0]
            r[idx] = draw(keys[active[idx]], ndraw[active[idx]])
            ndraw[active[idx]] += 1
            bad[idx] = r[idx] > bound[idx]
        x = r % W
        pos = (pad[tab] <= x[:, None]).sum(axis=1)
        ent = tab_off[tab] + pos
        new = ctr[active] + ent_delta[ent]
        if d and (np.any(new < 0) or np.any((ent_delta[ent] > 0) & (new < ctr[active]))):
            status = OVERFLOW
            break
        ctr[active] = new
        state[active] = ent_dst[ent]
        np.add.at(fired, (active, ent_rule[ent]), 1)
        steps[active] += 1
        if recording:
            trace[active, step + 1, 0] = state[active]
            trace[active, step + 1, 1:] = ctr[active]
    return stopped_at, state, ctr, fired, steps, status


# --- numba backend -------------------------------------------------------------

_numba_kernel = None


def _build_numba():
    from numba import njit, uint64

    g = uint64(0x9E3779B97F4A7C15)
    m1 = uint64(0xBF58476D1CE4E5B9)
    m2 = uint64(0x94D049BB133111EB)

    @njit(cache=True)
    def mix(z):
        z = (z ^ (z >> uint64(30))) * m1
        z = (z ^ (z >> uint64(27))) * m2
        return z ^ (z >> uint64(31))

    @njit(cache=True)
    def kernel(tab_off, cum, total, ent_rule, ent_dst, ent_delta, n_rules, d, stop_masks,
               start_state, start_counters, keys, max_steps, trace):
        R = keys.shape[0]
        state_out = np.empty(R, np.int64)
        ctr_out = np.empty((R, d), np.int64)
        fired = np.zeros((R, n_rules + 1), np.int64)
        stopped_at = np.full(R, -1, np.int64)
        steps_out = np.zeros(R, np.int64)
        recording = trace.shape[0] > 0
        bad = np.zeros(R, np.int64)
        for run in range(R):
            ctr = np.empty(d, np.int64)
            key = keys[run]
            nd = uint64(0)
            s = start_state
            for k in range(d):
                ctr[k] = start_counters[k]
            if recording:
                trace[run, 0, 0] = s
                for k in range(d):
                    trace[run, 0, k + 1] = ctr[k]
            step = 0
            failed = False
            while True:
                zm = 0
                for k in range(d):
                    if ctr[k] == 0:
                        zm |= 1 << k
                stop = False
                for m in stop_masks:
                    if (zm & m) == m:
                        stop = True
                        break
                if stop:
                    stopped_at[run] = step
                    break
                if step == max_steps:
                    break
                tab = s * (1 << d) + zm
                W = total[tab]
                rem = (uint64(0) - W) % W
                while True:
                    nd += uint64(1)
                    r = mix(key + nd * g)
                    if rem == 0 or r <= ~uint64(0) - rem:
                        break
                x = r % W
                e = tab_off[tab]
                while cum[e] <= x:
                    e += 1
                for k in range(d):
                    dk = ent_delta[e, k]
                    nv = ctr[k] + dk
                    if nv < 0 or (dk > 0 and nv < ctr[k]):
                        failed = True
                    ctr[k] = nv
                if failed:
                    bad[run] = 1
                    break
                s = ent_dst[e]
                fired[run, ent_rule[e]] += 1
                step += 1
                if recording:
                    trace[run, step, 0] = s
                    for k in range(d):
                        trace[run, step, k + 1] = ctr[k]
            state_out[run] = s
            for k in range(d):
                ctr_out[run, k] = ctr[k]
            steps_out[run] = step
        return stopped_at, state_out, ctr_out, fired, steps_out, 1 if bad.sum() > 0 else 0

    return kernel


def simulate_numba(*args):
    global _numba_kernel
    if _numba_kernel is None:
        _numba_kernel = _build_numba()
    return _numba_kernel(*args)


def simulate(*args, backend: str | None = None):
    """Dispatch to the numba kernel unless disabled or ``backend='numpy'``."""
    if backend is None:
        backend = "numpy" if numba_disabled() else "numba"
    if backend == "numba":
        return simulate_numba(*args)
    return simulate_numpy(*args)
