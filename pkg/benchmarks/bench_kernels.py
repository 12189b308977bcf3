"""Benchmark the numba kernels against their pure-numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--pages N] [--pairs N]

The same workloads run through both implementations; numba timings exclude
the first (compilation) call.
"""

from __future__ import annotations

import argparse
import random
import time

import numpy as np

from deckagent import _kernels


def _random_boxes(rng: random.Random, n: int) -> np.ndarray:
    out = np.empty((n, 4), dtype=np.float64)
    for i in range(n):
        x1, y1 = rng.randint(0, 600), rng.randint(0, 400)
        out[i] = (x1, y1, x1 + rng.randint(1, 90), y1 + rng.randint(1, 30))
    return out


def _random_codes(rng: random.Random, length: int) -> np.ndarray:
    return np.array([rng.randint(97, 122) for _ in range(length)], dtype=np.int32)


def bench_pairwise(pages: int) -> dict[str, float]:
    rng = random.Random(1)
    workload = [_random_boxes(rng, rng.randint(20, 50)) for _ in range(pages)]
    timings = {}
    impls = {"numpy": _kernels.pairwise_box_distances_numpy}
    if _kernels.HAVE_NUMBA:
        _kernels.pairwise_box_distances_numba(workload[0])  # warm the JIT
        impls["numba"] = _kernels.pairwise_box_distances_numba
    for name, fn in impls.items():
        start = time.perf_counter()
        for boxes in workload:
            fn(boxes)
        timings[name] = time.perf_counter() - start
    return timings


def bench_levenshtein(pairs: int) -> dict[str, float]:
    rng = random.Random(2)
    workload = [
        (_random_codes(rng, rng.randint(5, 40)), _random_codes(rng, rng.randint(5, 40)))
        for _ in range(pairs)
    ]
    timings = {}
    impls = {"numpy": _kernels.levenshtein_numpy}
    if _kernels.HAVE_NUMBA:
        _kernels.levenshtein_numba(*workload[0])  # warm the JIT
        impls["numba"] = _kernels.levenshtein_numba
    for name, fn in impls.items():
        start = time.perf_counter()
        for a, b in workload:
            fn(a, b)
        timings[name] = time.perf_counter() - start
    return timings


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pages", type=int, default=2000, help="pages for the distance kernel")
    parser.add_argument("--pairs", type=int, default=20000, help="string pairs for levenshtein")
    args = parser.parse_args()

    print(f"active kernel path: {_kernels.ACTIVE} (numba available: {_kernels.HAVE_NUMBA})")
    print()
    for label, timings in (
        (f"pairwise box distances, {args.pages} pages", bench_pairwise(args.pages)),
        (f"levenshtein, {args.pairs} pairs", bench_levenshtein(args.pairs)),
    ):
        print(label)
        for name, seconds in sorted(timings.items()):
            print(f"  {name:6s} {seconds * 1000:9.1f} ms")
        if len(timings) == 2:
            print(f"  speedup numba vs numpy: {timings['numpy'] / timings['numba']:.1f}x")
        print()


if __name__ == "__main__":
    main()
