"""Survival data model: ingestion, horizon recoding, time grids, diagnostics."""
from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator, Sequence

import numpy as np

from .errors import DegenerateGridError, ParseError, SchemaError

if TYPE_CHECKING:  # pragma: no cover
    from .nuisance import NuisanceSet

logger = logging.getLogger(__name__)

DEFAULT_GRID_CAP = 512


@dataclass(frozen=True)
class SurvivalSample:
    x: np.ndarray
    u: float
    delta: int
    w: int


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Immutable table of right-censored observations ``(X, U, Delta, W)``.

    ``u`` is the observed time ``min(T, C)``, ``delta`` is 1 when the failure
    was observed and ``w`` is the binary treatment. ``t_max`` is the analysis
    horizon once :func:`truncate_and_recode` has been applied (``None`` before).
    """

    x: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    w: np.ndarray
    t_max: float | None = None
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else x.reshape(0, max(len(self.feature_names), 1))
        n = x.shape[0]
        u = np.asarray(self.u, dtype=float).reshape(-1)
        delta = np.asarray(self.delta).reshape(-1)
        w = np.asarray(self.w).reshape(-1)
        if not (len(u) == len(delta) == len(w) == n):
            raise ValueError("x, u, delta and w must have the same number of rows")
        if n:
            if not np.all(np.isfinite(x)):
                raise ValueError("features must be finite (no missing entries)")
            if not np.all(np.isfinite(u)) or np.any(u < 0):
                raise ValueError("observed times must be finite and non-negative")
            if not np.all(np.isin(delta, (0, 1))) or not np.all(np.isin(w, (0, 1))):
                raise ValueError("delta and w must be 0/1 indicators")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValueError("feature_names length does not match feature dimension")
        object.__setattr__(self, "x", _frozen(x, float))
        object.__setattr__(self, "u", _frozen(u, float))
        object.__setattr__(self, "delta", _frozen(delta, np.int64))
        object.__setattr__(self, "w", _frozen(w, np.int64))
        object.__setattr__(self, "feature_names", names)
        if self.t_max is not None:
            object.__setattr__(self, "t_max", float(self.t_max))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def samples(self) -> list[SurvivalSample]:
        return list(iter(self))

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[SurvivalSample]:
        for i in range(self.n):
            yield SurvivalSample(self.x[i], float(self.u[i]), int(self.delta[i]), int(self.w[i]))

    def subset(self, index) -> "SurvivalDataset":
        index = np.asarray(index)
        return SurvivalDataset(self.x[index], self.u[index], self.delta[index], self.w[index],
                               t_max=self.t_max, feature_names=self.feature_names)

    @property
    def horizon(self) -> float:
        """``t_max`` if recoded, otherwise the largest observed time."""
        if self.t_max is not None:
            return self.t_max
        return float(self.u.max()) if self.n else 0.0


# ---------------------------------------------------------------------------
# CSV I/O


def load_csv(path, u_col: str = "u", delta_col: str = "delta", w_col: str = "w",
             x_cols: Sequence[str] | None = None) -> SurvivalDataset:
    """Read a comma-separated file with one header row.

    ``x_cols`` defaults to every column not named as ``u``, ``delta`` or ``w``
    (columns called ``tau_true`` are skipped as simulation metadata).
    Errors cite 1-based data rows (the header is not counted).
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty (no header row)") from None
        for col in (u_col, delta_col, w_col):
            if col not in header:
                raise SchemaError(f"missing column {col!r} in {path}")
        if x_cols is None:
            skip = {u_col, delta_col, w_col, "tau_true"}
            x_cols = [h for h in header if h not in skip]
        else:
            x_cols = list(x_cols)
            for col in x_cols:
                if col not in header:
                    raise SchemaError(f"missing column {col!r} in {path}")
        if not x_cols:
            raise SchemaError("at least one feature column is required")
        pos = {h: j for j, h in enumerate(header)}
        xi = [pos[c] for c in x_cols]
        ui, di, wi = pos[u_col], pos[delta_col], pos[w_col]
        xs, us, ds, ws = [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"row {row_no}: expected {len(header)} fields, got {len(row)}", row_no)
            try:
                vals = [float(row[j]) for j in xi]
                u = float(row[ui])
                d = float(row[di])
                w = float(row[wi])
            except ValueError:
                raise ParseError(f"row {row_no}: non-numeric cell", row_no) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"row {row_no}: missing or non-finite feature value", row_no)
            if not math.isfinite(u) or u < 0:
                raise ParseError(f"row {row_no}: observed time must be finite and >= 0", row_no)
            if d not in (0.0, 1.0):
                raise ParseError(f"row {row_no}: {delta_col} must be 0 or 1, got {row[di]!r}", row_no)
            if w not in (0.0, 1.0):
                raise ParseError(f"row {row_no}: {w_col} must be 0 or 1, got {row[wi]!r}", row_no)
            xs.append(vals)
            us.append(u)
            ds.append(int(d))
            ws.append(int(w))
    x = np.array(xs, dtype=float).reshape(len(xs), len(x_cols))
    return SurvivalDataset(x, us, ds, ws, feature_names=tuple(x_cols))


def fmt_float(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(ds: SurvivalDataset, path, extra: dict[str, np.ndarray] | None = None) -> None:
    """Write ``ds`` in the format read by :func:`load_csv` (17 significant digits)."""
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(ds.feature_names) + ["u", "delta", "w"] + list(extra))
        cols = list(extra.values())
        for i in range(ds.n):
            row = [fmt_float(v) for v in ds.x[i]]
            row += [fmt_float(ds.u[i]), str(int(ds.delta[i])), str(int(ds.w[i]))]
            row += [fmt_float(c[i]) for c in cols]
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Horizon handling


def truncate_and_recode(ds: SurvivalDataset, t_max: float) -> SurvivalDataset:
    """Cap observed times at ``t_max``; anything reaching the horizon counts as observed.

    Samples with ``u > t_max`` become ``(t_max, 1)``; samples with
    ``u == t_max`` get ``delta = 1``. Idempotent for a fixed ``t_max``.
    """
    if not (t_max > 0) or not math.isfinite(t_max):
        raise ValueError(f"t_max must be a positive finite time, got {t_max!r}")
    t_max = float(t_max)
    u = np.minimum(ds.u, t_max)
    delta = np.where(ds.u >= t_max, 1, ds.delta)
    return SurvivalDataset(ds.x, u, delta, ds.w, t_max=t_max, feature_names=ds.feature_names)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing evaluation times ending at the horizon.

    Observed times are mapped to the grid point at or below them; times
    before the first point map to index ``-1`` (where every survival curve is 1).
    """

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points, float).reshape(-1)
        if pts.size == 0:
            raise DegenerateGridError("time grid is empty")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if pts[0] < 0:
            raise ValueError("time grid must be non-negative")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.size

    @property
    def t_max(self) -> float:
        return float(self.points[-1])

    def index_of(self, u) -> np.ndarray:
        """Index of the largest grid point ``<= u`` (``-1`` if none)."""
        return np.searchsorted(self.points, np.asarray(u, dtype=float), side="right") - 1

    def widths(self) -> np.ndarray:
        """Interval lengths ``t_k - t_{k-1}`` with ``t_{-1} = 0``."""
        return np.diff(self.points, prepend=0.0)


def build_time_grid(ds: SurvivalDataset, cap: int = DEFAULT_GRID_CAP) -> TimeGrid:
    """Distinct observed times, quantile-thinned to at most ``cap`` points.

    The horizon (``ds.t_max``, or the largest time when not recoded) is always
    the last point. Time zero is kept when it is observed, since atoms at zero
    carry mass for discrete-time data.
    """
    if ds.n == 0:
        raise ValueError("cannot build a time grid from an empty dataset")
    if cap < 2:
        raise ValueError("grid cap must be >= 2")
    horizon = ds.horizon
    if horizon <= 0:
        raise DegenerateGridError("all observed times are zero; no usable time grid")
    u = np.sort(ds.u[ds.u <= horizon])
    distinct = np.unique(u)
    if distinct.size > cap:
        # quantiles of the observed-time distribution, snapped to observed values
        probs = np.linspace(0.0, 1.0, cap)
        picked = np.quantile(u, probs, method="inverted_cdf")
        distinct = np.unique(picked)
        if distinct[-1] != horizon and distinct.size >= cap:
            distinct = distinct[:-1]
    if distinct[-1] != horizon:
        distinct = np.append(distinct[distinct < horizon], horizon)
    return TimeGrid(distinct)


# ---------------------------------------------------------------------------
# Diagnostics


@dataclass(frozen=True)
class DiagnosticsReport:
    propensity_range: tuple[float, float]
    censoring_floor: float
    event_rate: float
    horizon_mass: float
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "propensity_min": self.propensity_range[0],
            "propensity_max": self.propensity_range[1],
            "censoring_floor": self.censoring_floor,
            "event_rate": self.event_rate,
            "horizon_mass": self.horizon_mass,
            "warnings": list(self.warnings),
        }


def diagnose(ds: SurvivalDataset, nuisances: "NuisanceSet", propensity_bounds=(0.01, 0.99)) -> DiagnosticsReport:
    """Overlap and censoring-positivity summary. Never mutates or raises."""
    e = np.asarray(nuisances.e_hat_raw if nuisances.e_hat_raw is not None else nuisances.e_hat)
    prange = (float(e.min()), float(e.max())) if e.size else (float("nan"), float("nan"))
    sc_at_u = nuisances.censoring_at_observed(ds)
    floor = float(sc_at_u.min()) if sc_at_u.size else 1.0
    event_rate = float(ds.delta.mean()) if ds.n else float("nan")
    horizon = ds.horizon
    horizon_mass = float(np.mean(ds.u >= horizon)) if ds.n else float("nan")
    notes = []
    lo, hi = propensity_bounds
    if e.size and (prange[0] < lo or prange[1] > hi):
        notes.append(f"propensity estimates leave [{lo}, {hi}]: observed range {prange}")
    if floor < nuisances.clamp_floor:
        notes.append(f"censoring survival at observed times drops to {floor:.4g}, "
                     f"below the clamp floor {nuisances.clamp_floor}")
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return DiagnosticsReport(prange, floor, event_rate, horizon_mass, tuple(notes))
