import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalsurv.data import SurvivalDataset, TimeGrid, build_time_grid
from causalsurv.errors import NotIdentifiedError
from causalsurv.nuisance import nuisances_from_curves
from causalsurv.scoring import (ScoreParts, compute_score_parts, ipcw_weight, ipcw_weights, robinson_score,
                                solve_constant_tau)
from causalsurv.sim import OracleNuisances, overlap_weighted_effect, simulate, true_tau


def test_robinson_examples():
    assert robinson_score(3.0, 1, 2.0, 0.5, 2.0) == pytest.approx(0.0)
    for tau in (-1.0, 0.0, 5.0):
        assert robinson_score(3.0, 0.5, tau, 0.5, 2.0) == 0.0
    t = np.array([3.0, 3.0, 1.0, 1.0])
    w = np.array([1, 1, 0, 0])
    # root of the summed score
    a = np.sum(robinson_score(t, w, 0.0, 0.5, 2.0))
    b = a - np.sum(robinson_score(t, w, 1.0, 0.5, 2.0))
    assert a / b == pytest.approx(2.0)


def random_problem(seed, n=30, G=12, censor=True):
    r = np.random.default_rng(seed)
    pts = np.cumsum(r.uniform(0.1, 1.0, G))
    grid = TimeGrid(pts)
    u = r.choice(pts, n) if r.uniform() < 0.5 else r.uniform(0, pts[-1], n)
    delta = r.binomial(1, 0.6, n) if censor else np.ones(n, int)
    w = r.binomial(1, 0.5, n)
    ds = SurvivalDataset(r.uniform(size=(n, 2)), u, delta, w, t_max=float(pts[-1]))

    def curves():
        drops = r.uniform(0.0, 0.3, (n, 2, G))
        return np.cumprod(1.0 - drops, axis=-1)

    s_c = curves() if censor else np.ones((n, 2, G))
    e = r.uniform(0.1, 0.9, n)
    return ds, nuisances_from_curves(grid, e, s_c, curves(), clamp_floor=r.uniform(0.01, 0.2))


def literal_psi(ds, nu, tau):
    """Per-sample transcription of the discrete doubly robust score."""
    out = np.empty(ds.n)
    pts = nu.grid.points
    for i in range(ds.n):
        w = int(ds.w[i])
        sc = np.maximum(nu.s_c[i, w], nu.clamp_floor)
        q = nu.q[i, w]
        m = nu.m_hat[i]
        e = nu.e_hat[i]
        k = int(np.searchsorted(pts, ds.u[i], side="right") - 1)
        k = max(k, 0)
        if ds.delta[i] == 1:
            s_eval = sc[k - 1] if k > 0 else 1.0
            y = ds.u[i]
            last = k - 1
        else:
            s_eval = sc[k]
            y = q[k]
            last = k
        first = (w - e) / s_eval * (y - m - tau * (w - e))
        integral = 0.0
        for j in range(last + 1):
            prev = sc[j - 1] if j > 0 else 1.0
            hazard = (prev - sc[j]) / prev
            integral += hazard / sc[j] * (q[j] - m - tau * (w - e))
        out[i] = first - (w - e) * integral
    return out


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.floats(-3, 3))
def test_score_linear_in_tau_matches_literal(seed, tau):
    ds, nu = random_problem(seed)
    parts = compute_score_parts(ds, nu)
    lit = literal_psi(ds, nu, tau)
    np.testing.assert_allclose(parts.psi(tau), lit, rtol=1e-12, atol=1e-12 * np.abs(lit).max())


def test_robinson_reduction():
    ds, nu = random_problem(3, censor=False)
    parts = compute_score_parts(ds, nu)
    resid = ds.w - nu.e_hat
    np.testing.assert_allclose(parts.a, resid * (ds.u - nu.m_hat), rtol=1e-14)
    np.testing.assert_allclose(parts.b, resid ** 2, rtol=1e-14)


def test_censored_sample_imputed_by_q():
    ds, nu = random_problem(4, censor=False)
    ds = SurvivalDataset(ds.x, ds.u, np.zeros(ds.n, int), ds.w, t_max=ds.t_max)
    parts = compute_score_parts(ds, nu)
    k = np.clip(nu.grid.index_of(ds.u), 0, None)
    q_at = nu.q[np.arange(ds.n), ds.w, k]
    resid = ds.w - nu.e_hat
    np.testing.assert_allclose(parts.a, resid * (q_at - nu.m_hat), rtol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_clamp_monotonicity(seed):
    ds, nu = random_problem(seed)
    hi = nu.clamp_floor
    lo_nu = nuisances_from_curves(nu.grid, nu.e_hat, nu.s_c, nu.s_t, clamp_floor=hi / 2)
    a = compute_score_parts(ds, nu)
    b = compute_score_parts(ds, lo_nu)
    k = np.clip(nu.grid.index_of(ds.u), 0, None)
    for i in range(ds.n):
        if np.all(nu.s_c[i, ds.w[i], : k[i] + 1] >= hi):
            assert a.a[i] == b.a[i] and a.b[i] == b.b[i]


def test_ipcw_weight_examples():
    assert ipcw_weight(0.8, 1) == pytest.approx(1.25)
    assert ipcw_weight(0.8, 0) is None
    with pytest.warns(RuntimeWarning, match="clamp"):
        assert ipcw_weight(0.01, 1, clamp_floor=0.05) == pytest.approx(20.0)


def test_ipcw_weights_vectorized():
    ds, nu = random_problem(5)
    wts = ipcw_weights(ds, nu)
    assert np.all(np.isnan(wts[ds.delta == 0]))
    sc = nu.censoring_at_observed(ds)
    for i in np.flatnonzero(ds.delta == 1):
        assert wts[i] == pytest.approx(ipcw_weight(sc[i], 1, nu.clamp_floor))


def test_solve_constant_tau_examples():
    t = np.array([3.0, 3.0, 1.0, 1.0])
    w = np.array([1, 1, 0, 0])
    resid = w - 0.5
    est = solve_constant_tau(ScoreParts(resid * (t - 2.0), resid ** 2))
    assert est.tau_hat == pytest.approx(2.0)
    assert est.std_err == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(NotIdentifiedError):
        solve_constant_tau(ScoreParts(np.ones(4), np.zeros(4)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0.01, 5)), min_size=1, max_size=50))
def test_constant_tau_root(rows):
    a = np.array([r[0] for r in rows])
    b = np.array([r[1] for r in rows])
    est = solve_constant_tau(ScoreParts(a, b))
    assert abs(np.sum(a - est.tau_hat * b)) <= 1e-8 * max(np.sum(np.abs(a)), 1e-300) + 1e-12


def test_score_parts_csv(tmp_path):
    parts = ScoreParts(np.array([0.1, -2.5]), np.array([0.25, 1.0]))
    parts.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "i,a,b"
    assert [float(v) for v in lines[2].split(",")[1:]] == [-2.5, 1.0]


def oracle_parts(setting, n, seed, chunk=10_000):
    ds, _, _ = simulate(setting, n, seed=seed)
    oracle = OracleNuisances(setting)
    grid = build_time_grid(ds)
    a, b = [], []
    for s in range(0, n, chunk):
        idx = np.arange(s, min(n, s + chunk))
        part = compute_score_parts(ds.subset(idx), oracle.nuisance_set(ds.subset(idx), grid))
        a.append(part.a)
        b.append(part.b)
    return ds, ScoreParts(np.concatenate(a), np.concatenate(b))


@pytest.mark.slow
def test_oracle_score_mean_zero_setting1():
    ds, parts = oracle_parts(1, 100_000, seed=31)
    psi = parts.psi(true_tau(1, ds.x))
    se = psi.std(ddof=1) / np.sqrt(psi.size)
    assert abs(psi.mean()) < 3 * se


@pytest.mark.slow
def test_oracle_constant_effect_setting1():
    _, parts = oracle_parts(1, 20_000, seed=32)
    est = solve_constant_tau(parts)
    target = overlap_weighted_effect(1)
    assert abs(est.tau_hat - target) < 3 * est.std_err
