"""Compiled vs pure-Python kernel timings.

Times greedy matching, recursive pairing and block diagnostics on random
covariates under both backends, checks that the two produce identical output,
and prints one row per (operation, size).

    python3 bench/benchmark.py [--sizes 200 1000 4000] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from tupleworks import Sample, block_recursive_pairing, diagnose, greedy_nonbipartite_match
from tupleworks._accel import get_kernels


def best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[200, 1000, 4000])
    ap.add_argument("--dim", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        get_kernels("cython")
    except ImportError:
        raise SystemExit("compiled kernels are not built; run pip install -e . --no-build-isolation")

    print(f"{'operation':<22}{'units':>8}{'cython s':>12}{'python s':>12}{'speed-up':>10}  same")
    for m in args.sizes:
        rng = np.random.default_rng(m)
        x = rng.normal(size=(m, args.dim))
        sample = Sample([f"u{i}" for i in range(m)], x, 4)
        part = block_recursive_pairing(sample, 2)
        cases = {
            "greedy match": lambda b: greedy_nonbipartite_match(x, backend=b),
            "recursive pairing K=2": lambda b: block_recursive_pairing(sample, 2, backend=b).members.tolist(),
            "diagnose": lambda b: diagnose(sample, part, backend=b),
        }
        for name, fn in cases.items():
            tc, oc = best_of(lambda: fn("cython"), args.repeat)
            tp, op = best_of(lambda: fn("python"), args.repeat)
            print(f"{name:<22}{m:>8}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}  {oc == op}")


if __name__ == "__main__":
    main()
