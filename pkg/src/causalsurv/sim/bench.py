"""Monte Carlo benchmark and confidence-interval coverage runners."""
from __future__ import annotations

import csv
import traceback
from dataclasses import dataclass, field

import numpy as np

from ..csf import fit_csf, fit_ipcw_cf
from ..data import fmt_float
from ..forest import CSF_DEFAULTS, NUISANCE_DEFAULTS, ForestConfig
from ..nuisance import assemble_nuisances
from .baselines import baseline_s_learner, baseline_virtual_twins, survival_baseline_config
from .dgp import DgpSpec, generate
from .oracles import true_tau

METHODS = ("csf", "ipcw", "vt", "slearner", "slearner_int")
DEFAULT_POINTS = tuple(0.2 * j for j in range(1, 5))


def rep_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(1, dtype=np.uint32)[0])


def classification_error(tau_hat, tau, mask=None) -> float:
    tau_hat = np.asarray(tau_hat)
    tau = np.asarray(tau)
    if mask is not None:
        tau_hat, tau = tau_hat[mask], tau[mask]
    return float(1.0 - np.mean(np.sign(tau_hat) == np.sign(tau)))


def classification_mask(setting: int, X) -> np.ndarray | None:
    """Setting 4 has no effect when ``x1 < 0.3``; its sign is scored only on ``x1 >= 0.3``."""
    return np.asarray(X)[:, 0] >= 0.3 if setting == 4 else None


@dataclass
class RepRecord:
    setting: int
    rep: int
    method: str
    mse: float = float("nan")
    class_error: float = float("nan")
    excess_mse: float = float("nan")
    error: str | None = None


@dataclass
class BenchmarkResult:
    records: list = field(default_factory=list)
    scatter: list = field(default_factory=list)  # (setting, method, tau_true, tau_hat)

    def ok(self, setting, method):
        return [r for r in self.records if r.setting == setting and r.method == method and r.error is None]

    def failures(self):
        return [r for r in self.records if r.error is not None]

    def summary(self) -> list[dict]:
        out = []
        keys = sorted({(r.setting, METHODS.index(r.method) if r.method in METHODS else 99, r.method)
                       for r in self.records})
        for setting, _, method in keys:
            recs = self.ok(setting, method)
            row = {"setting": setting, "method": method, "reps_ok": len(recs),
                   "reps_failed": sum(1 for r in self.records
                                      if r.setting == setting and r.method == method and r.error is not None)}
            for name in ("mse", "excess_mse", "class_error"):
                vals = np.array([getattr(r, name) for r in recs], dtype=float)
                row[name] = float(vals.mean()) if vals.size else float("nan")
                row[name + "_se"] = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else float("nan")
            out.append(row)
        return out

    def mean(self, setting, method, metric="mse") -> float:
        for row in self.summary():
            if row["setting"] == setting and row["method"] == method:
                return row[metric]
        raise KeyError((setting, method))

    def write_tables(self, path) -> None:
        rows = self.summary()
        cols = ["setting", "method", "reps_ok", "reps_failed", "mse", "mse_se", "excess_mse",
                "excess_mse_se", "class_error", "class_error_se"]
        _write_csv(path, cols, [[row[c] for c in cols] for row in rows])

    def write_raw(self, path) -> None:
        cols = ["setting", "rep", "method", "mse", "excess_mse", "class_error", "error"]
        _write_csv(path, cols, [[r.setting, r.rep, r.method, r.mse, r.excess_mse, r.class_error, r.error or ""]
                                for r in self.records])

    def write_scatter(self, path) -> None:
        _write_csv(path, ["setting", "method", "tau_true", "tau_hat"], self.scatter)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def fit_predict(method: str, ds, X_test, seed: int, csf_config: ForestConfig, nuisance_config: ForestConfig,
                nuisances=None, threads=None):
    """Fit one method on ``ds`` and return its CATE predictions at ``X_test``."""
    if method in ("csf", "ipcw"):
        cfg = csf_config.with_(seed=seed)
        ncfg = nuisance_config.with_(seed=seed)
        if nuisances is None:
            nuisances = assemble_nuisances(ds, ncfg, threads=threads)
        fit = fit_csf if method == "csf" else fit_ipcw_cf
        kw = {} if method == "csf" else {"nuisance_config": ncfg}
        model = fit(ds, cfg, nuisances=nuisances, threads=threads, **kw)
        return model.predict(X_test).tau_hat
    if method == "vt":
        cfg = survival_baseline_config(ds.p, seed=seed, num_trees=nuisance_config.num_trees)
        return baseline_virtual_twins(ds, cfg, threads=threads).predict(X_test)
    if method in ("slearner", "slearner_int"):
        inter = method == "slearner_int"
        cfg = survival_baseline_config(ds.p * (2 if inter else 1) + 1, seed=seed,
                                       num_trees=nuisance_config.num_trees)
        return baseline_s_learner(ds, cfg, interactions=inter, threads=threads).predict(X_test)
    raise ValueError(f"unknown method {method!r}")


def run_benchmark(settings=(1, 2, 3, 4), methods=("csf", "ipcw", "vt", "slearner"), n: int = 2000,
                  reps: int = 20, seed: int = 0, n_test: int = 2000,
                  csf_config: ForestConfig = CSF_DEFAULTS, nuisance_config: ForestConfig = NUISANCE_DEFAULTS,
                  threads=None, scatter_reps: int = 1, progress=None) -> BenchmarkResult:
    """Fresh train/test draws per rep; one failing method/rep is recorded, not raised."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    result = BenchmarkResult()
    for setting in settings:
        for rep in range(reps):
            ds, _, _ = generate(DgpSpec(setting, n, seed=rep_seed(seed, setting, rep, 0)))
            test, tau_test, _ = generate(DgpSpec(setting, n_test, seed=rep_seed(seed, setting, rep, 1)))
            fit_seed = rep_seed(seed, setting, rep, 2)
            mask = classification_mask(setting, test.x)
            shared = None
            recs = []
            for method in methods:
                rec = RepRecord(setting, rep, method)
                try:
                    if method in ("csf", "ipcw") and shared is None:
                        shared = assemble_nuisances(ds, nuisance_config.with_(seed=fit_seed), threads=threads)
                    pred = fit_predict(method, ds, test.x, fit_seed, csf_config, nuisance_config,
                                       nuisances=shared, threads=threads)
                    if not np.all(np.isfinite(pred)):
                        raise FloatingPointError("non-finite predictions")
                    rec.mse = float(np.mean((pred - tau_test) ** 2))
                    rec.class_error = classification_error(pred, tau_test, mask)
                    if rep < scatter_reps:
                        result.scatter.extend((setting, method, float(t), float(p))
                                              for t, p in zip(tau_test, pred))
                except Exception as exc:  # quarantine: keep going with other reps/methods
                    rec.error = f"{type(exc).__name__}: {exc}".replace("\n", " ")
                    if progress is not None:
                        progress(traceback.format_exc())
                recs.append(rec)
            best = min((r.mse for r in recs if r.error is None), default=float("nan"))
            for r in recs:
                if r.error is None:
                    r.excess_mse = r.mse / best if best > 0 else 1.0
            result.records.extend(recs)
            if progress is not None:
                progress(f"setting {setting} rep {rep}: " +
                         ", ".join(f"{r.method}={r.mse:.4g}" for r in recs))
    return result


@dataclass
class CoverageResult:
    setting: int
    points: np.ndarray  # (k, p)
    truth: np.ndarray
    covered: np.ndarray  # (reps_ok, k) bool
    widths: np.ndarray
    estimates: np.ndarray
    failures: list

    @property
    def coverage(self) -> np.ndarray:
        return self.covered.mean(axis=0) if self.covered.size else np.full(self.truth.size, np.nan)

    @property
    def coverage_se(self) -> np.ndarray:
        c = self.coverage
        return np.sqrt(c * (1 - c) / max(self.covered.shape[0], 1))

    def rows(self):
        for j in range(self.truth.size):
            yield [self.setting, j + 1, float(self.points[j, 0]), float(self.truth[j]),
                   float(self.coverage[j]), float(self.coverage_se[j]),
                   float(np.mean(self.widths[:, j])) if self.widths.size else float("nan"),
                   int(self.covered.shape[0]), len(self.failures)]

    def write(self, path) -> None:
        _write_csv(path, ["setting", "point", "x_value", "tau_true", "coverage", "coverage_se",
                          "mean_width", "reps_ok", "reps_failed"], list(self.rows()))


def coverage_points(p: int = 5, values=DEFAULT_POINTS) -> np.ndarray:
    return np.array([[v] * p for v in values], dtype=float)


def coverage_experiment(setting: int, points=None, reps: int = 50, num_trees: int = 5000, n: int = 2000,
                        seed: int = 0, level: float = 0.95, nuisance_config: ForestConfig = NUISANCE_DEFAULTS,
                        csf_config: ForestConfig = CSF_DEFAULTS, threads=None, progress=None,
                        debias: str = "bayes") -> CoverageResult:
    """Fraction of reps whose interval at each point covers the exact CATE."""
    pts = coverage_points() if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    cfg = csf_config.with_(num_trees=num_trees)
    if cfg.ci_group_size < 2 or num_trees < 2 * cfg.ci_group_size:
        raise ValueError("coverage needs ci_group_size >= 2 and num_trees >= 2 * ci_group_size")
    truth = true_tau(setting, pts)
    covered, widths, ests, failures = [], [], [], []
    for rep in range(reps):
        s = rep_seed(seed, setting, rep, 3)
        try:
            ds, _, _ = generate(DgpSpec(setting, n, p=pts.shape[1], seed=s))
            model = fit_csf(ds, cfg.with_(seed=s), nuisance_config=nuisance_config.with_(seed=s), threads=threads)
            pred = model.predict(pts, variance=True, debias=debias)
            lo, hi = pred.interval(level)
            if not np.all(np.isfinite(lo) & np.isfinite(hi)):
                raise FloatingPointError("interval unavailable")
            covered.append((lo <= truth) & (truth <= hi))
            widths.append(hi - lo)
            ests.append(pred.tau_hat)
            if progress is not None:
                progress(f"coverage setting {setting} rep {rep}: {covered[-1].astype(int).tolist()}")
        except Exception as exc:
            failures.append((rep, f"{type(exc).__name__}: {exc}"))
    k = truth.size
    return CoverageResult(setting, pts, truth, np.array(covered, dtype=bool).reshape(-1, k),
                          np.array(widths).reshape(-1, k), np.array(ests).reshape(-1, k), failures)
