"""Closed-form and Monte Carlo truths for the synthetic designs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..data import SurvivalDataset, TimeGrid
from ..nuisance import DEFAULT_CLAMP_FLOOR, NuisanceSet, derive_m, derive_q
from .dgp import (DISCRETE, T_MAX, _check_setting, censoring_params, draw_failure, failure_params,
                  propensity)


def restricted_mean_exact(setting: int, X, w, horizon: float | None = None) -> np.ndarray:
    """``E[T(w) ^ horizon | X]`` in closed form."""
    setting = _check_setting(setting)
    c = T_MAX[setting] if horizon is None else float(horizon)
    par = failure_params(setting, X, w)
    if setting == 1:
        lc = np.log(c)
        return np.exp(par + 0.5) * stats.norm.cdf(lc - par - 1.0) + c * stats.norm.sf(lc - par)
    if setting == 2:
        k = np.exp(par)
        r = np.sqrt(c)
        return 2.0 * (1.0 / k ** 2 - np.exp(-k * r) * (r / k + 1.0 / k ** 2))
    # integer-valued T: E[T ^ c] = sum_{j < c} P(T > j)
    js = np.arange(int(np.ceil(c)))
    tail = stats.poisson.sf(js[None, :], par[:, None])
    return tail.sum(axis=1) - (np.ceil(c) - c) * tail[:, -1] if js.size else np.zeros(par.size)


def true_tau(setting: int, X) -> np.ndarray:
    """Exact CATE on the restricted survival scale."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return restricted_mean_exact(setting, X, 1) - restricted_mean_exact(setting, X, 0)


@dataclass(frozen=True)
class MonteCarloValue:
    value: float
    std_err: float
    reps: int


def oracle_tau(setting: int, x, mc_reps: int = 100_000, seed: int = 0) -> MonteCarloValue:
    """Monte Carlo ``E[T(1) ^ t_max - T(0) ^ t_max | X = x]`` with its standard error.

    Potential outcomes are coupled through shared random draws, which leaves
    the expectation unchanged and shrinks the standard error.
    """
    setting = _check_setting(setting)
    if mc_reps < 2:
        raise ValueError("mc_reps must be >= 2")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    X = np.repeat(x, mc_reps, axis=0)
    c = T_MAX[setting]
    # common random numbers: both arms replay one stream, so equal laws give an exact 0
    arms = [np.minimum(draw_failure(setting, X, w, np.random.default_rng([seed, setting, 99])), c)
            for w in (1, 0)]
    d = arms[0] - arms[1]
    return MonteCarloValue(float(d.mean()), float(d.std(ddof=1) / np.sqrt(mc_reps)), mc_reps)


def censoring_survival(setting: int, t, X, w) -> np.ndarray:
    """``P(C > t | X, W=w)`` for each row of ``X`` (rows) and time in ``t`` (columns)."""
    setting = _check_setting(setting)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    par = censoring_params(setting, X, w)[:, None]
    if setting == 1:
        return np.exp(-(t[None, :] ** 2) * np.exp(par))
    if setting == 2:
        return np.broadcast_to(np.clip(1.0 - t[None, :] / 3.0, 0.0, 1.0), (X.shape[0], t.size)).copy()
    return stats.poisson.sf(np.floor(t)[None, :], par)


def failure_survival(setting: int, t, X, w) -> np.ndarray:
    """``P(T(w) > t | X)``, rows by times."""
    setting = _check_setting(setting)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    par = failure_params(setting, X, w)[:, None]
    if setting == 1:
        with np.errstate(divide="ignore"):
            return stats.norm.sf(np.log(t)[None, :] - par)
    if setting == 2:
        return np.exp(-np.sqrt(t)[None, :] * np.exp(par))
    return stats.poisson.sf(np.floor(t)[None, :], par)


def oracle_grid(setting: int, ds: SurvivalDataset | None = None, cap: int = 512) -> TimeGrid:
    """Integer grid for the Poisson designs, otherwise the data grid."""
    setting = _check_setting(setting)
    if DISCRETE[setting]:
        return TimeGrid(np.arange(0.0, T_MAX[setting] + 1.0))
    from ..data import build_time_grid
    return build_time_grid(ds, cap=cap)


class OracleNuisances:
    """Exact nuisance functions for one design."""

    def __init__(self, setting: int):
        self.setting = _check_setting(setting)
        self.t_max = T_MAX[self.setting]

    def e(self, X):
        return propensity(self.setting, X)

    def s_c(self, t, X, w):
        return censoring_survival(self.setting, t, X, w)

    def s_t(self, t, X, w):
        return failure_survival(self.setting, t, X, w)

    def rmst(self, X, w):
        return restricted_mean_exact(self.setting, X, w)

    def m(self, X):
        e = self.e(X)
        return derive_m(e, self.rmst(X, 0), self.rmst(X, 1))

    def q(self, t, X, w, grid: TimeGrid):
        """``E[T ^ t_max | T > t_k]`` on ``grid``, from the exact curve (exact for integer designs)."""
        return derive_q(self.s_t(grid.points, X, w), grid)

    def nuisance_set(self, ds: SurvivalDataset, grid: TimeGrid | None = None,
                     clamp_floor: float = DEFAULT_CLAMP_FLOOR, s_c=None, s_t=None) -> NuisanceSet:
        """Oracle :class:`NuisanceSet` for ``ds``; ``s_c``/``s_t`` override the curves."""
        grid = oracle_grid(self.setting, ds) if grid is None else grid
        e = self.e(ds.x)
        sc = s_c if s_c is not None else np.stack([self.s_c(grid.points, ds.x, w) for w in (0, 1)], axis=1)
        st = s_t if s_t is not None else np.stack([self.s_t(grid.points, ds.x, w) for w in (0, 1)], axis=1)
        q = derive_q(st, grid)
        rmst = np.column_stack([self.rmst(ds.x, 0), self.rmst(ds.x, 1)])
        m = derive_m(e, rmst[:, 0], rmst[:, 1])
        return NuisanceSet(grid, e, m, sc, st, q, rmst, float(clamp_floor), e)


def _sobol(n_points: int, seed: int, p: int) -> np.ndarray:
    # scrambled Sobol points, rounded up to a power of two for balance
    m = max(int(np.ceil(np.log2(max(n_points, 2)))), 1)
    return stats.qmc.Sobol(d=p, scramble=True, seed=seed).random_base2(m)


def overlap_weighted_effect(setting: int, n_points: int = 1 << 20, seed: int = 12345, p: int = 5) -> float:
    """``E[e(X)(1-e(X)) tau(X)] / E[e(X)(1-e(X))]`` by quasi-Monte Carlo over ``X``.

    This is the limit of the constant-effect estimator when the effect varies
    with ``X``.
    """
    X = _sobol(n_points, seed, p)
    e = propensity(setting, X)
    wgt = e * (1.0 - e)
    return float(np.sum(wgt * true_tau(setting, X)) / np.sum(wgt))


def average_effect(setting: int, n_points: int = 1 << 20, seed: int = 12345, p: int = 5) -> float:
    """``E[tau(X)]`` by quasi-Monte Carlo."""
    X = _sobol(n_points, seed, p)
    return float(np.mean(true_tau(setting, X)))
