"""Out-of-bag nuisance estimates: propensity, censoring and failure curves.

All per-sample quantities are produced out-of-bag, which plays the role of
cross-fitting: the estimate for sample ``i`` comes only from trees whose
subsample excluded ``i``.

Curves live on a shared :class:`~causalsurv.data.TimeGrid` and hold
right-continuous survival probabilities ``S(t_k) = P(T > t_k)``; the value
before the first grid point is 1.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import SurvivalDataset, TimeGrid, build_time_grid
from .errors import FitError
from .forest import NUISANCE_DEFAULTS, ForestConfig, RegressionSplitter, SurvivalSplitter, grow_forest

CENSORING = "censoring"
FAILURE = "failure"

DEFAULT_CLAMP_FLOOR = 0.05
DEFAULT_PROPENSITY_CLIP = 0.01


def _subseed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([int(seed), tag]).generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------------------
# Propensity


def fit_propensity_forest(ds: SurvivalDataset, config: ForestConfig = NUISANCE_DEFAULTS,
                          threads=None, backend=None):
    if ds.n == 0 or np.all(ds.w == ds.w[0]):
        raise FitError("propensity model needs both treatment arms present")
    cfg = config.with_(seed=_subseed(config.seed, 1))
    return grow_forest(ds.x, RegressionSplitter(ds.w.astype(float)), cfg, threads=threads, backend=backend)


def fit_propensity(ds: SurvivalDataset, config: ForestConfig = NUISANCE_DEFAULTS,
                   clip: float = DEFAULT_PROPENSITY_CLIP, threads=None, backend=None,
                   return_raw: bool = False):
    """Out-of-bag ``P(W=1 | X)`` from a regression forest, clipped to ``[clip, 1-clip]``."""
    forest = fit_propensity_forest(ds, config, threads, backend)
    raw, used = forest.predict_mean(ds.w.astype(float), ds.x, exclude=np.arange(ds.n))
    # samples in every tree fall back to the in-bag prediction
    if np.any(used == 0):
        full, _ = forest.predict_mean(ds.w.astype(float), ds.x[used == 0])
        raw = raw.copy()
        raw[used == 0] = full
    e_hat = np.clip(raw, clip, 1.0 - clip)
    return (e_hat, raw) if return_raw else e_hat


# ---------------------------------------------------------------------------
# Survival curves


def restricted_mean(curves: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """``integral_0^{t_max} S(s) ds`` for piecewise-constant curves on ``grid``."""
    s = np.asarray(curves, dtype=float)
    left = np.concatenate([np.ones(s.shape[:-1] + (1,)), s[..., :-1]], axis=-1)
    return left @ grid.widths()


def derive_q(s_curve, grid: TimeGrid) -> np.ndarray:
    """Expected restricted survival given survival past each grid point.

    ``Q(t_k) = t_k + sum_{j>k} S(t_{j-1}) (t_j - t_{j-1}) / S(t_k)``, capped to
    ``[t_k, t_max]``; ``Q(t_k) = t_k`` where ``S(t_k) = 0``. Works on the last
    axis, so ``(..., G)`` stacks of curves are accepted.
    """
    s = np.asarray(s_curve, dtype=float)
    t = grid.points
    widths = np.diff(t)
    # tail[k] = sum_{j>k} S_{j-1} * (t_j - t_{j-1})
    contrib = s[..., :-1] * widths
    tail = np.zeros_like(s)
    if contrib.shape[-1]:
        tail[..., :-1] = np.cumsum(contrib[..., ::-1], axis=-1)[..., ::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = t + np.where(s > 0, tail / np.where(s > 0, s, 1.0), 0.0)
    q = np.clip(q, t, grid.t_max)
    q[..., -1] = grid.t_max
    return q


def derive_m(e_hat, q0_at_zero, q1_at_zero):
    """``m(x) = e(x) Q_1(0|x) + (1 - e(x)) Q_0(0|x)``."""
    e_hat = np.asarray(e_hat, dtype=float)
    return e_hat * np.asarray(q1_at_zero) + (1.0 - e_hat) * np.asarray(q0_at_zero)


def survival_targets(ds: SurvivalDataset, target: str):
    """``(event, pre)`` indicator arrays for a censoring or failure fit.

    Failures win ties (``delta = 1`` when ``T <= C``), so when estimating the
    censoring curve a failure at ``t`` leaves the risk set before censorings at
    ``t`` are counted.
    """
    delta = ds.delta.astype(float)
    if target == CENSORING:
        return 1.0 - delta, delta
    if target == FAILURE:
        return delta, np.zeros(ds.n)
    raise ValueError(f"target must be {CENSORING!r} or {FAILURE!r}, got {target!r}")


class SurvivalForest:
    """Forest-weighted Kaplan-Meier estimator on a fixed grid."""

    def __init__(self, forest, grid: TimeGrid, tidx, event, pre):
        self.forest = forest
        self.grid = grid
        self.tidx = np.ascontiguousarray(tidx, dtype=np.int64)
        self.event = np.ascontiguousarray(event, dtype=float)
        self.pre = np.ascontiguousarray(pre, dtype=float)

    def curves(self, Xq, exclude=None) -> np.ndarray:
        if self.forest is None:
            return np.ones((np.atleast_2d(Xq).shape[0], len(self.grid)))
        return self.forest.km_curves(Xq, self.tidx, self.event, self.pre, len(self.grid), exclude)

    def restricted_mean(self, Xq, exclude=None) -> np.ndarray:
        return restricted_mean(self.curves(Xq, exclude), self.grid)


def fit_survival_forest(X, u, event, pre, grid: TimeGrid, config: ForestConfig = NUISANCE_DEFAULTS,
                        threads=None, backend=None, label: str = "target") -> SurvivalForest:
    """Grow a survival forest on ``X``; no events at all gives the constant curve 1."""
    X = np.asarray(X, dtype=float)
    tidx = np.clip(grid.index_of(u), 0, None)
    event = np.asarray(event, dtype=float)
    if not np.any(event > 0):
        warnings.warn(f"no {label} events observed; using the constant survival curve 1",
                      RuntimeWarning, stacklevel=2)
        return SurvivalForest(None, grid, tidx, event, pre)
    splitter = SurvivalSplitter(tidx, event, len(grid), pre=pre)
    forest = grow_forest(X, splitter, config, threads=threads, backend=backend)
    return SurvivalForest(forest, grid, tidx, event, pre)


def with_arm(X, w) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    col = np.broadcast_to(np.asarray(w, dtype=float), (X.shape[0],))
    return np.column_stack([X, col])


def fit_conditional_survival(ds: SurvivalDataset, target: str, config: ForestConfig = NUISANCE_DEFAULTS,
                             grid: TimeGrid | None = None, threads=None, backend=None) -> np.ndarray:
    """Out-of-bag curves ``S_w(t_k | X_i)`` for both arms, shape ``(n, 2, G)``.

    The forest uses ``(X, W)`` as features and each sample is evaluated at
    ``W = 0`` and ``W = 1``.
    """
    grid = build_time_grid(ds) if grid is None else grid
    event, pre = survival_targets(ds, target)
    tag = 2 if target == CENSORING else 3
    cfg = config.with_(seed=_subseed(config.seed, tag))
    sf = fit_survival_forest(with_arm(ds.x, ds.w), ds.u, event, pre, grid, cfg, threads, backend, label=target)
    oob = np.arange(ds.n)
    out = np.empty((ds.n, 2, len(grid)))
    for arm in (0, 1):
        out[:, arm, :] = sf.curves(with_arm(ds.x, arm), exclude=oob)
    return out


# ---------------------------------------------------------------------------
# Container


@dataclass(frozen=True, eq=False)
class NuisanceSet:
    """Per-sample nuisance estimates on a shared grid.

    ``s_c``, ``s_t`` and ``q`` have shape ``(n, 2, G)`` (arm on axis 1);
    ``rmst[:, w]`` is ``Q_w(0 | X_i)``.
    """

    grid: TimeGrid
    e_hat: np.ndarray
    m_hat: np.ndarray
    s_c: np.ndarray
    s_t: np.ndarray
    q: np.ndarray
    rmst: np.ndarray
    clamp_floor: float = DEFAULT_CLAMP_FLOOR
    e_hat_raw: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.e_hat.size

    def arm_curves(self, w, which: str = "s_c") -> np.ndarray:
        """``(n, G)`` curves evaluated at each sample's own arm ``w``."""
        arr = getattr(self, which)
        return arr[np.arange(self.n), np.asarray(w, dtype=np.int64)]

    def censoring_at_observed(self, ds: SurvivalDataset) -> np.ndarray:
        """Unclamped ``S^C`` at each observed time, as used in the scores.

        Failures use the left limit ``S^C(U-)`` (probability that the sample
        was still uncensored when it failed); censored samples use ``S^C(U)``.
        """
        sc = self.arm_curves(ds.w, "s_c")
        k = np.clip(self.grid.index_of(ds.u), 0, None)
        rows = np.arange(ds.n)
        at = sc[rows, k]
        before = np.where(k > 0, sc[rows, np.maximum(k - 1, 0)], 1.0)
        return np.where(ds.delta == 1, before, at)

    def subset(self, index) -> "NuisanceSet":
        index = np.asarray(index)
        raw = None if self.e_hat_raw is None else self.e_hat_raw[index]
        return NuisanceSet(self.grid, self.e_hat[index], self.m_hat[index], self.s_c[index],
                           self.s_t[index], self.q[index], self.rmst[index], self.clamp_floor, raw)

    def to_dict(self, curves: bool = True) -> dict:
        d = {
            "grid": self.grid.points.tolist(),
            "clamp_floor": self.clamp_floor,
            "e_hat": self.e_hat.tolist(),
            "e_hat_raw": None if self.e_hat_raw is None else self.e_hat_raw.tolist(),
            "m_hat": self.m_hat.tolist(),
            "rmst": self.rmst.tolist(),
        }
        if curves:
            # grid-major: one row per grid point, columns are samples
            for name in ("s_c", "s_t"):
                arr = getattr(self, name)
                d[name] = [arr[:, arm, :].T.tolist() for arm in (0, 1)]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NuisanceSet":
        grid = TimeGrid(np.asarray(d["grid"], dtype=float))
        n = len(d["e_hat"])
        G = len(grid)
        if "s_c" in d:
            s_c = np.stack([np.asarray(d["s_c"][arm], dtype=float).reshape(G, n).T for arm in (0, 1)], axis=1)
            s_t = np.stack([np.asarray(d["s_t"][arm], dtype=float).reshape(G, n).T for arm in (0, 1)], axis=1)
            q = derive_q(s_t, grid)
        else:
            s_c = s_t = q = np.full((n, 2, 0), np.nan)
        raw = d.get("e_hat_raw")
        return cls(grid, np.asarray(d["e_hat"], dtype=float), np.asarray(d["m_hat"], dtype=float),
                   s_c, s_t, q, np.asarray(d["rmst"], dtype=float).reshape(n, 2),
                   float(d["clamp_floor"]), None if raw is None else np.asarray(raw, dtype=float))


def nuisances_from_curves(grid: TimeGrid, e_hat, s_c, s_t, clamp_floor=DEFAULT_CLAMP_FLOOR,
                          e_hat_raw=None) -> NuisanceSet:
    """Build a :class:`NuisanceSet` from propensities and ``(n, 2, G)`` curves."""
    s_c = np.asarray(s_c, dtype=float)
    s_t = np.asarray(s_t, dtype=float)
    e_hat = np.asarray(e_hat, dtype=float)
    q = derive_q(s_t, grid)
    rmst = restricted_mean(s_t, grid)
    m_hat = derive_m(e_hat, rmst[:, 0], rmst[:, 1])
    return NuisanceSet(grid, e_hat, m_hat, s_c, s_t, q, rmst, float(clamp_floor),
                       None if e_hat_raw is None else np.asarray(e_hat_raw, dtype=float))


def assemble_nuisances(ds: SurvivalDataset, config: ForestConfig = NUISANCE_DEFAULTS,
                       grid: TimeGrid | None = None, clamp_floor: float = DEFAULT_CLAMP_FLOOR,
                       propensity_clip: float = DEFAULT_PROPENSITY_CLIP, threads=None,
                       backend=None) -> NuisanceSet:
    """Fit propensity, censoring and failure forests and collect OOB estimates."""
    if ds.n == 0:
        raise FitError("cannot fit nuisances on an empty dataset")
    grid = build_time_grid(ds) if grid is None else grid
    e_hat, e_raw = fit_propensity(ds, config, propensity_clip, threads, backend, return_raw=True)
    s_c = fit_conditional_survival(ds, CENSORING, config, grid, threads, backend)
    s_t = fit_conditional_survival(ds, FAILURE, config, grid, threads, backend)
    return nuisances_from_curves(grid, e_hat, s_c, s_t, clamp_floor, e_raw)
