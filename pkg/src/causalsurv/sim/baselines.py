"""Outcome-model baselines built on the internal survival forest.

Both estimate the restricted mean survival under each arm and report the
difference; neither targets the treatment effect during splitting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..data import SurvivalDataset, TimeGrid, build_time_grid
from ..errors import FitError
from ..forest import ForestConfig
from ..nuisance import FAILURE, SurvivalForest, fit_survival_forest, survival_targets, with_arm


def survival_baseline_config(p: int, seed: int = 42, num_trees: int = 500) -> ForestConfig:
    """Conventional random survival forest settings.

    Bootstrap resampling of all ``n`` rows, adaptive (non-honest) trees,
    node size 15 and ``ceil(sqrt(p))`` candidate features.
    """
    return ForestConfig(num_trees=num_trees, mtry=max(1, math.ceil(math.sqrt(p))), min_node_size=15,
                        sample_fraction=1.0, honesty=False, bootstrap=True, ci_group_size=1, seed=seed)


@dataclass
class VirtualTwins:
    """Separate survival forests per arm."""

    forests: tuple[SurvivalForest, SurvivalForest]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.forests[1].restricted_mean(X) - self.forests[0].restricted_mean(X)


@dataclass
class SLearner:
    """One survival forest on ``(X, W)`` (optionally with ``X * W`` columns)."""

    forest: SurvivalForest
    interactions: bool

    def features(self, X, w) -> np.ndarray:
        Z = with_arm(X, w)
        if self.interactions:
            Z = np.column_stack([Z, np.asarray(X, dtype=float) * float(w)])
        return Z

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (self.forest.restricted_mean(self.features(X, 1))
                - self.forest.restricted_mean(self.features(X, 0)))


def _both_arms(ds):
    if ds.n == 0 or np.all(ds.w == ds.w[0]):
        raise FitError("both treatment arms must be present")


def baseline_virtual_twins(ds: SurvivalDataset, config: ForestConfig | None = None,
                           grid: TimeGrid | None = None, threads=None, backend=None) -> VirtualTwins:
    _both_arms(ds)
    config = config or survival_baseline_config(ds.p)
    grid = build_time_grid(ds) if grid is None else grid
    forests = []
    for arm in (0, 1):
        sub = ds.subset(np.flatnonzero(ds.w == arm))
        event, pre = survival_targets(sub, FAILURE)
        cfg = config.with_(seed=config.seed + 101 * (arm + 1))
        if sub.n < 2 * cfg.min_node_size:
            raise FitError(f"arm {arm} has only {sub.n} samples")
        forests.append(fit_survival_forest(sub.x, sub.u, event, pre, grid, cfg, threads, backend, label="failure"))
    return VirtualTwins(tuple(forests))


def baseline_s_learner(ds: SurvivalDataset, config: ForestConfig | None = None, interactions: bool = False,
                       grid: TimeGrid | None = None, threads=None, backend=None) -> SLearner:
    _both_arms(ds)
    grid = build_time_grid(ds) if grid is None else grid
    p_eff = ds.p * (2 if interactions else 1) + 1
    config = config or survival_baseline_config(p_eff)
    shell = SLearner(None, interactions)
    Z = shell.features(ds.x, 0)
    Z[:, ds.p] = ds.w
    if interactions:
        Z[:, ds.p + 1:] = ds.x * ds.w[:, None]
    event, pre = survival_targets(ds, FAILURE)
    shell.forest = fit_survival_forest(Z, ds.u, event, pre, grid, config.with_(seed=config.seed + 7),
                                       threads, backend, label="failure")
    return shell
