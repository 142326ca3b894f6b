"""Synthetic survival designs with known treatment effects.

Four designs on ``X ~ Uniform[0, 1]^p`` (``p = 5`` by default):

1. log-normal accelerated failure time with Cox censoring (``Lambda_0 = t^2``);
2. proportional hazards with ``Lambda_0 = sqrt(t)``, uniform censoring on (0, 3);
3. Poisson failure and censoring times, effect growing in ``sqrt(x1)``;
4. Poisson times where treatment only matters when ``x1 > 0.3``.

The true effect is the difference in restricted mean survival
``E[T(1) ^ t_max - T(0) ^ t_max | X = x]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..data import SurvivalDataset, truncate_and_recode

T_MAX = {1: 1.5, 2: 2.0, 3: 15.0, 4: 3.0}
DISCRETE = {1: False, 2: False, 3: True, 4: True}


def _check_setting(setting: int) -> int:
    setting = int(setting)
    if setting not in T_MAX:
        raise ValueError(f"setting must be one of 1-4, got {setting}")
    return setting


def _beta24(x):
    return stats.beta.pdf(x, 2, 4)


def propensity(setting: int, X) -> np.ndarray:
    """True ``P(W = 1 | X)``."""
    setting = _check_setting(setting)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if setting in (1, 3):
        return (1.0 + _beta24(X[:, 0])) / 4.0
    if setting == 2:
        return (1.0 + _beta24(X[:, 1])) / 4.0
    return 1.0 / ((1.0 + np.exp(-X[:, 0])) * (1.0 + np.exp(-X[:, 1])))


def failure_params(setting: int, X, w) -> np.ndarray:
    """Per-row failure-time parameter.

    Setting 1: mean of ``log T``; setting 2: log hazard multiplier;
    settings 3-4: Poisson mean.
    """
    setting = _check_setting(setting)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.broadcast_to(np.asarray(w, dtype=float), (X.shape[0],))
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    if setting == 1:
        low = (x1 < 0.5).astype(float)
        return -1.85 - 0.8 * low + 0.7 * np.sqrt(x2) + 0.2 * x3 + (0.7 - 0.4 * low - 0.4 * np.sqrt(x2)) * w
    if setting == 2:
        return x1 + (-0.5 + x2) * w
    if setting == 3:
        return x2 ** 2 + x3 + 6.0 + 2.0 * (np.sqrt(x1) - 0.3) * w
    return x2 + x3 + np.maximum(0.0, x1 - 0.3) * w


def censoring_params(setting: int, X, w) -> np.ndarray:
    """Per-row censoring parameter (Cox linear predictor or Poisson mean; unused for setting 2)."""
    setting = _check_setting(setting)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.broadcast_to(np.asarray(w, dtype=float), (X.shape[0],))
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    if setting == 1:
        low = (x1 < 0.5).astype(float)
        return -1.75 - 0.5 * np.sqrt(x2) + 0.2 * x3 + (1.15 + 0.5 * low - 0.3 * np.sqrt(x2)) * w
    if setting == 2:
        return np.zeros(X.shape[0])
    if setting == 3:
        return 12.0 + np.log1p(np.exp(x3))
    return 1.0 + np.log1p(np.exp(x3))


def draw_failure(setting: int, X, w, rng) -> np.ndarray:
    par = failure_params(setting, X, w)
    if setting == 1:
        return np.exp(par + rng.standard_normal(par.size))
    if setting == 2:
        # Lambda(t) = sqrt(t) * exp(par)  =>  T = (E / exp(par))^2
        return (rng.standard_exponential(par.size) / np.exp(par)) ** 2
    return rng.poisson(par).astype(float)


def draw_censoring(setting: int, X, w, rng) -> np.ndarray:
    par = censoring_params(setting, X, w)
    if setting == 1:
        # Lambda(t) = t^2 * exp(lp)
        return np.sqrt(rng.standard_exponential(par.size) / np.exp(par))
    if setting == 2:
        return rng.uniform(0.0, 3.0, size=par.size)
    return rng.poisson(par).astype(float)


@dataclass(frozen=True)
class DgpSpec:
    setting: int
    n: int
    p: int = 5
    seed: int = 0

    def __post_init__(self):
        _check_setting(self.setting)
        if self.n < 0 or self.p < 3:
            raise ValueError("need n >= 0 and p >= 3")

    @property
    def t_max(self) -> float:
        return T_MAX[self.setting]


@dataclass(frozen=True, eq=False)
class LatentRecord:
    """Unobserved quantities of a simulated draw."""

    t0: np.ndarray
    t1: np.ndarray
    t: np.ndarray
    c: np.ndarray
    e: np.ndarray


def generate(spec: DgpSpec):
    """Draw ``(dataset, tau_true, latent)``; the dataset is recoded at the design's horizon."""
    from .oracles import true_tau

    rng = np.random.default_rng([spec.seed, spec.setting])
    X = rng.uniform(size=(spec.n, spec.p))
    e = propensity(spec.setting, X)
    W = (rng.uniform(size=spec.n) < e).astype(np.int64)
    t0 = draw_failure(spec.setting, X, 0, rng)
    t1 = draw_failure(spec.setting, X, 1, rng)
    C = draw_censoring(spec.setting, X, W, rng)
    T = np.minimum(np.where(W == 1, t1, t0), spec.t_max)
    U = np.minimum(T, C)
    delta = (T <= C).astype(np.int64)
    names = tuple(f"x{j + 1}" for j in range(spec.p))
    ds = truncate_and_recode(SurvivalDataset(X, U, delta, W, feature_names=names), spec.t_max)
    return ds, true_tau(spec.setting, X), LatentRecord(t0, t1, T, C, e)


def simulate(setting: int, n: int, seed: int = 0, p: int = 5):
    return generate(DgpSpec(setting, n, p, seed))
