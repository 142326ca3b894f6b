"""Compare the compiled and numpy kernel backends.

Grows forests with each split objective on both backends, checks that the
trees are identical, and reports wall-clock times.

Usage::

    python3 benchmarks/bench_backends.py [--n 3000] [--trees 20]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from causalsurv.data import build_time_grid
from causalsurv.forest import (CausalSplitter, ForestConfig, RegressionSplitter, SurvivalSplitter,
                               get_kernels, grow_forest)
from causalsurv.nuisance import FAILURE, survival_targets
from causalsurv.sim import simulate


def splitters(ds):
    rng = np.random.default_rng(0)
    grid = build_time_grid(ds)
    event, pre = survival_targets(ds, FAILURE)
    return {
        "regression": RegressionSplitter(ds.u, np.ones(ds.n)),
        "causal": CausalSplitter(rng.normal(size=ds.n), rng.uniform(0.1, 1.0, ds.n), np.ones(ds.n)),
        "survival": SurvivalSplitter(grid.index_of(ds.u), event, len(grid), pre, np.ones(ds.n)),
    }


def timed(fn, repeat=3):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=3000)
    ap.add_argument("--trees", type=int, default=20)
    ap.add_argument("--queries", type=int, default=2000)
    args = ap.parse_args(argv)

    try:
        get_kernels("compiled")
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return 1

    ds, _, _ = simulate(1, args.n, seed=1)
    Xq = np.random.default_rng(1).uniform(size=(args.queries, ds.p))
    cfg = ForestConfig(num_trees=args.trees, ci_group_size=1, min_node_size=5, seed=3)
    print(f"n={args.n} trees={args.trees} queries={args.queries}")
    print(f"{'objective':<12}{'stage':<10}{'python (s)':>12}{'compiled (s)':>14}{'speedup':>10}  identical")
    for name, sp in splitters(ds).items():
        times, forests = {}, {}
        for backend in ("python", "compiled"):
            times[backend], forests[backend] = timed(
                lambda: grow_forest(ds.x, sp, cfg, threads=1, backend=backend), repeat=1)
        same = all(np.array_equal(getattr(forests["python"], a), getattr(forests["compiled"], a))
                   for a in ("feature", "threshold", "left", "right"))
        print(f"{name:<12}{'grow':<10}{times['python']:>12.3f}{times['compiled']:>14.4f}"
              f"{times['python'] / times['compiled']:>10.1f}  {same}")
        num = np.ones(ds.n)
        for backend in ("python", "compiled"):
            f = forests[backend]
            f._kernels = get_kernels(backend)
            times[backend], forests[backend] = timed(lambda: f.predict_ratio(ds.u, num, Xq))
        same = np.allclose(forests["python"][0], forests["compiled"][0], rtol=1e-12, atol=0)
        print(f"{name:<12}{'predict':<10}{times['python']:>12.3f}{times['compiled']:>14.4f}"
              f"{times['python'] / times['compiled']:>10.1f}  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
