"""Timing of the coincidence search on large streams.

    python benchmarks/bench_coincidences.py [--events 10000000] [--repeat 3]

Two streams of ``--events`` timestamps over 10 s: half of the second stream
is the first one jittered by 500 ps FWHM, the rest is uncorrelated. Prints
the best wall time of ``--repeat`` runs for counting and for pair output.
"""

import argparse
import time

import numpy as np

from pairlink.simkit import PS_PER_S
from pairlink.tsproc import find_coincidences


def streams(n, seed=0, span=10 * PS_PER_S):
    rng = np.random.default_rng(seed)
    a = np.sort(rng.integers(0, span, n))
    half = n // 2
    partner = a[rng.choice(n, half, replace=False)] + rng.normal(0, 212, half).astype(np.int64)
    b = np.sort(np.concatenate([partner, rng.integers(0, span, n - half)]))
    return a, b


def best_of(repeat, fn):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=10_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    a, b = streams(args.events)
    find_coincidences(a[:1000], b[:1000], 1.25, return_pairs=True)  # jit warm-up

    t, res = best_of(args.repeat, lambda: find_coincidences(a, b, 1.25))
    print(f"count  {args.events:>10d} x {b.size:d}: {t:7.3f} s  ({res.count} pairs)")
    t, _ = best_of(args.repeat, lambda: find_coincidences(a, b, 1.25, return_pairs=True))
    print(f"pairs  {args.events:>10d} x {b.size:d}: {t:7.3f} s")


if __name__ == "__main__":
    main()
