"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both implementations are imported directly, so the HALSIM_DISABLE_NUMBA
switch does not matter here. Compilation happens in a warm-up call that is
not timed.
"""
import argparse
import math
import timeit

import numpy as np

from halsim import _loops, _vectorized


def cases():
    rng = np.random.default_rng(0)
    x10 = rng.uniform(1e5, 5e6, 10)
    tol = 1e-12 * float(x10 @ x10)

    grid = np.linspace(0.1, 2.0, 129)
    mid = 0.5 * (grid[1:] + grid[:-1])
    target = np.sort(rng.uniform(0, 1, mid.size))
    h = grid[1] - grid[0]
    lo, hi = np.full(2, -13.8), np.full(2, 13.8)

    def problem(m, L):
        sizes = np.sort(rng.uniform(1e5, 4e6, m)) * rng.uniform(0.9, 1.1, (L, 1))
        rows = np.tile([0.5, 1, 0.2, 0.2, 0.0, 1.0, 3, 0.5, 1.5, 0.0, math.inf], (L, 1))
        return (sizes, np.linspace(0, 1, m), 2, np.full(L, 2e6), 2.0 * np.arange(1, L + 1) + 1,
                rows, 0.6, -200.0, 0)

    small, large = problem(4, 4), problem(10, 5)
    return [
        ("ses_fit (n=10)", lambda k: k.ses_fit(x10, 0.01, tol, 6)),
        ("hw_fit (n=10)", lambda k: k.hw_fit(x10, 0.02, tol, 6, 1e-7)),
        ("lomax fit_search", lambda k: k.fit_search(3, np.zeros(2), 0.5, 0.0, math.inf, mid,
                                                     target, h, lo, hi, 1e-7, 5000)),
        ("score_trajectories 4^4", lambda k: k.score_trajectories(*small)),
        ("score_trajectories 10^5", lambda k: k.score_trajectories(*large)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<26}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, fn in cases():
        times = {}
        for label, mod in (("numba", _loops), ("numpy", _vectorized)):
            fn(mod)  # warm-up / compilation
            t = timeit.Timer(lambda: fn(mod))
            n, _ = t.autorange()
            times[label] = min(t.repeat(args.repeat, n)) / n * 1e3
        print(f"{name:<26}{times['numba']:>12.3f}{times['numpy']:>12.3f}"
              f"{times['numpy'] / times['numba']:>9.1f}x")


if __name__ == "__main__":
    main()
