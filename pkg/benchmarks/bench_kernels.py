"""Compare the numba and numpy simulation backends.

    python benchmarks/bench_kernels.py [--runs 2000] [--steps 20000] [--repeat 3]

Both backends must produce identical outcomes; the script checks this before
reporting the best wall time of each and the speed-up.
"""

from __future__ import annotations

import argparse
import time
from importlib import resources

import numpy as np

from pmcreach.model import Config, z_all
from pmcreach.sim import simulate_batch
from pmcreach.textio import parse_pmc

CASES = [
    ("fig1.pmc", Config("s", (1, 1)), None),
    ("gambler-up.pmc", Config("q", (1,)), "all"),
    ("sqrtsum-4-2.pmc", Config("q", (1, 1)), None),
]


def _load(name: str):
    return parse_pmc(resources.files("pmcreach").joinpath("data", name).read_text())


def _best(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)

    # compile outside the timed region
    simulate_batch(_load("gambler-up.pmc"), Config("q", (1,)), None, 10, 0, 2, backend="numba")

    print(f"{'model':<18}{'steps':>12}{'numba s':>10}{'numpy s':>10}{'speed-up':>10}")
    for name, start, crit in CASES:
        pmc = _load(name)
        z = z_all(pmc.dimension) if crit == "all" else None

        def run(backend):
            return simulate_batch(pmc, start, z, args.steps, args.seed, args.runs, backend=backend)

        t_nb, a = _best(lambda: run("numba"), args.repeat)
        t_np, b = _best(lambda: run("numpy"), args.repeat)
        for f in ("stopped_at", "final_state", "final_counters", "fired", "steps"):
            if not np.array_equal(getattr(a, f), getattr(b, f)):
                raise SystemExit(f"{name}: backends disagree on {f}")
        total = int(a.steps.sum())
        print(f"{name:<18}{total:>12}{t_nb:>10.3f}{t_np:>10.3f}{t_np / t_nb:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
