"""Causal survival forests and the complete-case IPCW baseline."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import SurvivalDataset, TimeGrid
from .errors import CIUnavailableError, FitError, NotIdentifiedError
from .forest import (CSF_DEFAULTS, NUISANCE_DEFAULTS, CausalSplitter, Forest, ForestConfig,
                     RegressionSplitter, grow_forest)
from .nuisance import DEFAULT_CLAMP_FLOOR, NuisanceSet, assemble_nuisances
from .scoring import ScoreParts, compute_score_parts, ipcw_weights

MODEL_FORMAT_VERSION = 1
IPCW_WEIGHT_CAP = 1.0 / DEFAULT_CLAMP_FLOOR


@dataclass(frozen=True, eq=False)
class CatePrediction:
    """Point estimates with the ingredients of their variance.

    ``sigma_hat`` is NaN wherever variance was not requested or is unavailable.
    """

    tau_hat: np.ndarray
    v_hat: np.ndarray
    sigma_hat: np.ndarray
    n_trees: np.ndarray

    def interval(self, level: float = 0.95):
        if not 0.0 <= level < 1.0:
            raise ValueError("level must lie in [0, 1)")
        z = normal_quantile(level)
        return self.tau_hat - z * self.sigma_hat, self.tau_hat + z * self.sigma_hat


@dataclass(eq=False)
class CsfModel:
    """Fitted forest plus the score components it averages.

    ``train_index`` maps forest rows to rows of the dataset the model was fit
    on (all rows for ``method="csf"``, the complete cases for ``"ipcw"``).
    """

    forest: Forest
    nuisances: NuisanceSet | None
    parts: ScoreParts
    config: ForestConfig
    t_max: float
    sample_weights: np.ndarray
    train_index: np.ndarray
    method: str = "csf"
    n_total: int = 0

    @property
    def p(self) -> int:
        return self.forest.p

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.p:
            raise ValueError(f"query has {X.shape[1]} features; model expects {self.p}")
        return X

    def predict(self, X=None, oob: bool = False, variance: bool = False,
                debias: str = "bayes") -> CatePrediction:
        """CATE estimates ``sum(alpha w a) / sum(alpha w b)`` at rows of ``X``.

        With ``oob=True`` the queries are the training rows and each one only
        uses trees that did not see it; ``X`` may then be omitted.

        ``debias`` chooses how the little-bags variance handles its Monte
        Carlo noise: ``"bayes"`` (default) reports the posterior mean under a
        flat prior on nonnegative variances (see :func:`debias_variance`);
        ``"floor"`` clips the raw difference at 0 and warns when it does.
        """
        if debias not in ("bayes", "floor"):
            raise ValueError(f"unknown debias mode {debias!r}")
        if oob:
            Xq = self.forest.X
            exclude = np.arange(self.forest.n)
        else:
            Xq = self._check(X)
            exclude = None
        if variance:
            _require_bags(self.config)
        w = self.sample_weights
        est, vhat, h, h_se, used = self.forest.predict_ratio(w * self.parts.a, w * self.parts.b, Xq,
                                                            exclude=exclude, want_var=variance)
        zero = (used > 0) & (vhat == 0)
        if np.any(zero):
            raise NotIdentifiedError(f"forest-weighted score denominator is zero at query {int(np.flatnonzero(zero)[0])}")
        sigma = np.full(est.shape, np.nan)
        if variance:
            if debias == "bayes":
                h = debias_variance(h, h_se)
            else:
                neg = h < 0
                if np.any(neg):
                    warnings.warn(f"little-bags variance correction overshoots at {int(neg.sum())} queries; "
                                  "floored at 0", RuntimeWarning, stacklevel=2)
            sigma = np.sqrt(np.maximum(h, 0.0)) / np.abs(vhat)
        return CatePrediction(est, vhat, sigma, used)

    def predict_oob_full(self) -> np.ndarray:
        """OOB estimates indexed by the full training dataset (NaN off ``train_index``)."""
        out = np.full(self.n_total or self.forest.n, np.nan)
        out[self.train_index] = self.predict(oob=True).tau_hat
        return out

    def to_dict(self, curves: bool = True) -> dict:
        return {
            "format": "causalsurv.model",
            "version": MODEL_FORMAT_VERSION,
            "method": self.method,
            "t_max": self.t_max,
            "config": self.config.to_dict(),
            "n_total": self.n_total,
            "train_index": self.train_index.tolist(),
            "sample_weights": self.sample_weights.tolist(),
            "parts": {"a": self.parts.a.tolist(), "b": self.parts.b.tolist()},
            "nuisances": None if self.nuisances is None else self.nuisances.to_dict(curves=curves),
            "forest": self.forest.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, backend=None) -> "CsfModel":
        if d.get("format") != "causalsurv.model" or d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError("unsupported model document")
        nu = None if d.get("nuisances") is None else NuisanceSet.from_dict(d["nuisances"])
        return cls(
            forest=Forest.from_dict(d["forest"], backend=backend),
            nuisances=nu,
            parts=ScoreParts(np.asarray(d["parts"]["a"], dtype=float), np.asarray(d["parts"]["b"], dtype=float)),
            config=ForestConfig.from_dict(d["config"]),
            t_max=float(d["t_max"]),
            sample_weights=np.asarray(d["sample_weights"], dtype=float),
            train_index=np.asarray(d["train_index"], dtype=np.int64),
            method=d["method"],
            n_total=int(d["n_total"]),
        )


def debias_variance(h_raw, h_se):
    """Posterior mean of a variance whose unbiased estimate may be negative.

    Models ``h_raw ~ N(H, h_se**2)`` with a flat prior on ``H >= 0``; the
    posterior is a normal truncated at 0, with mean
    ``h_raw + h_se * phi(r) / Phi(r)`` for ``r = h_raw / h_se``. Where
    ``h_se`` is 0 the estimate is exact and is clipped at 0 instead.

    Parameters
    ----------
    h_raw : array_like
        Between-bag minus within-bag variance.
    h_se : array_like
        Monte Carlo scale of ``h_raw``.

    Returns
    -------
    ndarray
        Nonnegative variance estimates; NaN where ``h_raw`` is NaN.
    """
    h_raw = np.asarray(h_raw, dtype=float)
    h_se = np.asarray(h_se, dtype=float)
    out = np.maximum(h_raw, 0.0)
    out[np.isnan(h_raw)] = np.nan
    ok = np.isfinite(h_raw) & (h_se > 0)
    h, se = h_raw[ok], h_se[ok]
    r = h / se
    mid = r >= -3.0
    post = np.empty_like(r)
    post[mid] = h[mid] + se[mid] * np.exp(norm.logpdf(r[mid]) - norm.logcdf(r[mid]))
    # the sum above cancels for deep negative r; there (r + phi/Phi) = 1/(t + 2/(t + 3/(t + ...))), t = -r
    t = -r[~mid]
    acc = np.zeros_like(t)
    for k in range(60, 0, -1):
        acc = k / (t + acc)
    post[~mid] = se[~mid] * acc
    out[ok] = post
    return out


def _require_bags(config: ForestConfig):
    if config.ci_group_size < 2 or config.num_trees // config.ci_group_size < 2:
        raise CIUnavailableError("variance needs ci_group_size >= 2 and at least two little bags")


def relabel_node(a, b, weights=None):
    """Pseudo-outcomes ``(a_i - tau b_i) / sum(b)`` at the node solve ``tau``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w = np.ones(a.size) if weights is None else np.asarray(weights, dtype=float)
    rho = CausalSplitter(a, b, w).relabel(np.arange(a.size))
    if rho is None:
        raise NotIdentifiedError("node score denominator is zero")
    return rho


def fit_forest_on_scores(X, parts: ScoreParts, config: ForestConfig, weights=None,
                         threads=None, backend=None) -> Forest:
    w = np.ones(parts.n) if weights is None else np.asarray(weights, dtype=float)
    if float(np.sum(w * parts.b)) == 0.0:
        raise NotIdentifiedError("score denominators sum to zero at the root")
    return grow_forest(X, CausalSplitter(parts.a, parts.b, w), config, threads=threads, backend=backend)


def fit_csf(ds: SurvivalDataset, config: ForestConfig = CSF_DEFAULTS,
            nuisance_config: ForestConfig | None = None, nuisances: NuisanceSet | None = None,
            grid: TimeGrid | None = None, clamp_floor: float = DEFAULT_CLAMP_FLOOR,
            threads=None, backend=None) -> CsfModel:
    """Fit a causal survival forest on a (recoded) dataset."""
    _check_arms(ds)
    if nuisances is None:
        ncfg = nuisance_config or NUISANCE_DEFAULTS.with_(seed=config.seed)
        nuisances = assemble_nuisances(ds, ncfg, grid=grid, clamp_floor=clamp_floor,
                                       threads=threads, backend=backend)
    parts = compute_score_parts(ds, nuisances)
    weights = np.ones(ds.n)
    forest = fit_forest_on_scores(ds.x, parts, config, weights, threads, backend)
    return CsfModel(forest, nuisances, parts, config, float(ds.horizon), weights,
                    np.arange(ds.n), "csf", ds.n)


def fit_weighted_mean_forest(X, y, weights, config: ForestConfig, threads=None, backend=None):
    """Weighted regression forest; returns OOB fitted means (in-bag where no OOB tree)."""
    forest = grow_forest(X, RegressionSplitter(y, weights), config, threads=threads, backend=backend)
    n = len(y)
    est, _, _, _, used = forest.predict_ratio(weights * y, weights, X, exclude=np.arange(n))
    if np.any(used == 0):
        full, _, _, _, _ = forest.predict_ratio(weights * y, weights, X[used == 0])
        est = est.copy()
        est[used == 0] = full
    return est


def fit_ipcw_cf(ds: SurvivalDataset, config: ForestConfig = CSF_DEFAULTS,
                nuisance_config: ForestConfig | None = None, nuisances: NuisanceSet | None = None,
                m_hat=None, clamp_floor: float = DEFAULT_CLAMP_FLOOR, threads=None,
                backend=None) -> CsfModel:
    """Causal forest on complete cases weighted by inverse censoring probability.

    ``e_hat`` and the censoring curves come from full-data nuisances; the
    outcome model ``m_hat`` is a weighted regression forest on the complete
    cases unless supplied (indexed by complete cases).
    """
    _check_arms(ds)
    complete = np.flatnonzero(ds.delta == 1)
    if complete.size == 0:
        raise FitError("no complete cases: every sample is censored")
    ncfg = nuisance_config or NUISANCE_DEFAULTS.with_(seed=config.seed)
    if nuisances is None:
        nuisances = assemble_nuisances(ds, ncfg, clamp_floor=clamp_floor, threads=threads, backend=backend)
    cc = ds.subset(complete)
    weights = ipcw_weights(ds, nuisances)[complete]
    if np.any(weights >= IPCW_WEIGHT_CAP):
        warnings.warn("some inverse-censoring weights hit the clamp", RuntimeWarning, stacklevel=2)
    if m_hat is None:
        if cc.n < 2 * ncfg.min_node_size:
            raise FitError(f"too few complete cases ({cc.n}) for the outcome model")
        m_hat = fit_weighted_mean_forest(cc.x, cc.u, weights, ncfg.with_(seed=ncfg.seed + 7919), threads, backend)
    m_hat = np.asarray(m_hat, dtype=float)
    resid = cc.w.astype(float) - nuisances.e_hat[complete]
    parts = ScoreParts(resid * (cc.u - m_hat), resid * resid)
    forest = fit_forest_on_scores(cc.x, parts, config, weights, threads, backend)
    return CsfModel(forest, nuisances, parts, config, float(ds.horizon), weights,
                    complete.astype(np.int64), "ipcw", ds.n)


def _check_arms(ds: SurvivalDataset):
    if ds.n == 0:
        raise FitError("dataset is empty")
    if np.all(ds.w == 1) or np.all(ds.w == 0):
        raise FitError("both treatment arms must be present")


def predict_tau(model: CsfModel, x) -> CatePrediction:
    return model.predict(x)


def estimate_variance(model: CsfModel, x, debias: str = "bayes") -> np.ndarray:
    """``sigma^2(x) = H(x) / V(x)^2`` from the little-bags decomposition."""
    pred = model.predict(x, variance=True, debias=debias)
    return pred.sigma_hat ** 2


def predict_with_ci(model: CsfModel, x, level: float = 0.95, debias: str = "bayes"):
    """``(tau_hat, lower, upper)`` normal intervals at ``level``."""
    pred = model.predict(x, variance=level > 0, debias=debias)
    if level == 0:
        return pred.tau_hat, pred.tau_hat.copy(), pred.tau_hat.copy()
    lo, hi = pred.interval(level)
    return pred.tau_hat, lo, hi


def normal_quantile(level: float) -> float:
    return 0.0 if level <= 0 else float(norm.ppf(0.5 + level / 2.0))


__all__ = ["CatePrediction", "CsfModel", "fit_csf", "fit_ipcw_cf", "predict_tau", "estimate_variance",
           "predict_with_ci", "relabel_node", "fit_forest_on_scores", "normal_quantile",
           "debias_variance"]
