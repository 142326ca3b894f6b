"""Doubly robust score components for the restricted survival-time effect.

The censoring-adjusted score is linear in ``tau``:
``psi_i(tau) = a_i - tau * b_i``. Storing the pair ``(a_i, b_i)`` lets node
solves and forest predictions be computed as ratios of weighted sums.

Discretization on the grid ``t_0 < ... < t_{G-1}``: with the censoring curve
clamped below at ``floor`` (``S_k = max(S^C(t_k), floor)``, ``S_{-1} = 1``),
the discrete hazard is ``h_k = 1 - S_k / S_{k-1}`` and the integrand weight is
``r_k = h_k / S_k``. A failure at grid index ``k`` was uncensored up to and
including ``t_k`` (failures win ties), so it is weighted by ``1 / S_{k-1}``
and the compensator runs over ``j < k``. A censored sample is weighted by
``1 / S_k`` with the compensator over ``j <= k``. This makes the censoring
augmentation exactly mean zero when the censoring curve is correct.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .data import SurvivalDataset, fmt_float
from .errors import NotIdentifiedError, ScoringError

CLAMP_WARN_SHARE = 0.20


@dataclass(frozen=True, eq=False)
class ScoreParts:
    """Per-sample numerator ``a`` and denominator ``b`` of the score."""

    a: np.ndarray
    b: np.ndarray

    @property
    def n(self) -> int:
        return self.a.size

    def psi(self, tau) -> np.ndarray:
        return self.a - np.asarray(tau) * self.b

    def subset(self, index) -> "ScoreParts":
        return ScoreParts(self.a[index], self.b[index])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["i", "a", "b"])
            for i, (ai, bi) in enumerate(zip(self.a, self.b)):
                wr.writerow([i, fmt_float(ai), fmt_float(bi)])


@dataclass(frozen=True)
class ConstantEffectEstimate:
    tau_hat: float
    std_err: float
    n_effective: int


def robinson_score(t, w, tau, e_hat, m_hat):
    """Complete-data residual-on-residual score ``(w - e)(t - m - tau (w - e))``."""
    r = np.asarray(w, dtype=float) - np.asarray(e_hat, dtype=float)
    return r * (np.asarray(t, dtype=float) - np.asarray(m_hat, dtype=float) - np.asarray(tau) * r)


def _clamped(curve, floor):
    return np.maximum(np.asarray(curve, dtype=float), floor)


def hazard_weights(s_c_curve, floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Clamped curve ``S_k`` and compensator weights ``r_k = h_k / S_k`` (last axis = grid)."""
    s = _clamped(s_c_curve, floor)
    prev = np.concatenate([np.ones(s.shape[:-1] + (1,)), s[..., :-1]], axis=-1)
    h = 1.0 - s / prev
    return s, h / s


def derive_hazard_terms(s_c_curve, u, q_curve, m_hat, grid, clamp_floor: float = 0.0,
                        inclusive: bool = True) -> tuple[float, float]:
    """Compensator integrals of the censoring hazard up to ``u``.

    Returns ``(sum r_k, sum r_k (Q(t_k) - m_hat))`` over grid points
    ``t_k <= u`` (``inclusive=True``) or ``t_k < t_{k(u)}`` (``inclusive=False``,
    the convention applied to observed failures).
    """
    s_c_curve = np.asarray(s_c_curve, dtype=float)
    s, r = hazard_weights(s_c_curve, clamp_floor)
    if clamp_floor > 0 and s_c_curve.size:
        share = float(np.mean(s_c_curve < clamp_floor))
        if share > CLAMP_WARN_SHARE:
            warnings.warn(f"censoring curve clamped at {share:.0%} of grid points; positivity is doubtful",
                          RuntimeWarning, stacklevel=2)
    k = int(grid.index_of(u))
    stop = k + 1 if inclusive else max(k, 0)
    stop = max(stop, 0)
    rr = r[:stop]
    q = np.asarray(q_curve, dtype=float)[:stop]
    return float(np.sum(rr)), float(np.sum(rr * (q - m_hat)))


def compute_score_parts(ds: SurvivalDataset, nu, chunk: int = 2048) -> ScoreParts:
    """Score components ``(a_i, b_i)`` at each sample's own arm."""
    n = ds.n
    if nu.n != n:
        raise ScoringError(f"nuisances cover {nu.n} samples, dataset has {n}")
    grid = nu.grid
    G = len(grid)
    floor = nu.clamp_floor
    w = ds.w.astype(float)
    resid = w - nu.e_hat
    k = np.clip(grid.index_of(ds.u), 0, G - 1)
    event = ds.delta == 1
    a = np.empty(n)
    b = np.empty(n)
    clamped = 0
    considered = 0
    cols = np.arange(G)
    for s in range(0, n, chunk):
        sl = slice(s, min(n, s + chunk))
        rows = np.arange(sl.start, sl.stop)
        arm = ds.w[sl].astype(np.int64)
        sc = nu.s_c[rows, arm]
        q = nu.q[rows, arm]
        m = nu.m_hat[sl]
        kk = k[sl]
        ev = event[sl]
        stilde, r = hazard_weights(sc, floor)
        # compensator runs over j < k for failures and j <= k for censored samples
        upto = np.where(ev, kk, kk + 1)
        mask = cols[None, :] < upto[:, None]
        lvl = np.sum(np.where(mask, r, 0.0), axis=1)
        intq = np.sum(np.where(mask, r * (q - m[:, None]), 0.0), axis=1)
        at_k = stilde[np.arange(rows.size), kk]
        before = np.where(kk > 0, stilde[np.arange(rows.size), np.maximum(kk - 1, 0)], 1.0)
        denom = np.where(ev, before, at_k)
        q_at = q[np.arange(rows.size), kk]
        outcome = np.where(ev, ds.u[sl], q_at) - m
        rr = resid[sl]
        a[sl] = rr * (outcome / denom - intq)
        b[sl] = rr * rr * (1.0 / denom - lvl)
        clamped += int(np.sum(mask & (sc < floor)))
        considered += int(np.sum(mask))
    bad = np.flatnonzero(~(np.isfinite(a) & np.isfinite(b)))
    if bad.size:
        raise ScoringError(f"non-finite score for sample {int(bad[0])}")
    if considered and clamped / considered > CLAMP_WARN_SHARE:
        warnings.warn(f"censoring curve clamped at {clamped / considered:.0%} of evaluated grid points; "
                      "positivity is doubtful", RuntimeWarning, stacklevel=2)
    return ScoreParts(a, b)


def ipcw_weight(s_c_before_u: float, delta: int, clamp_floor: float = 0.05):
    """``1 / S^C(U-)`` for an observed failure (clamped), ``None`` if censored."""
    if int(delta) == 0:
        return None
    if s_c_before_u < clamp_floor:
        warnings.warn(f"censoring probability {s_c_before_u:.3g} clamped to {clamp_floor}",
                      RuntimeWarning, stacklevel=2)
    return 1.0 / max(float(s_c_before_u), clamp_floor)


def ipcw_weights(ds: SurvivalDataset, nu) -> np.ndarray:
    """Vectorized :func:`ipcw_weight`; censored samples get NaN."""
    sc = nu.censoring_at_observed(ds)
    out = 1.0 / np.maximum(sc, nu.clamp_floor)
    return np.where(ds.delta == 1, out, np.nan)


def solve_constant_tau(parts: ScoreParts) -> ConstantEffectEstimate:
    """Root of ``sum_i (a_i - tau b_i) = 0`` with a sandwich standard error."""
    sa = float(np.sum(parts.a))
    sb = float(np.sum(parts.b))
    if sb == 0.0 or not np.isfinite(sb):
        raise NotIdentifiedError("sum of score denominators is zero; effect not identified")
    tau = sa / sb
    resid = parts.a - tau * parts.b
    se = float(np.sqrt(np.sum(resid * resid)) / abs(sb))
    return ConstantEffectEstimate(tau, se, int(np.count_nonzero(parts.b)))
