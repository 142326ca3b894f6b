import json
import warnings

import numpy as np
import pytest
from scipy import integrate, stats
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from causalsurv.csf import (IPCW_WEIGHT_CAP, CatePrediction, CsfModel, debias_variance, fit_csf, fit_ipcw_cf,
                            fit_forest_on_scores, predict_with_ci, relabel_node)
from causalsurv.data import SurvivalDataset, truncate_and_recode
from causalsurv.errors import CIUnavailableError, FitError, NotIdentifiedError
from causalsurv.forest import ForestConfig
from causalsurv.io import model_to_json
from causalsurv.nuisance import assemble_nuisances, nuisances_from_curves
from causalsurv.scoring import ScoreParts, solve_constant_tau

from conftest import make_dataset

NCFG = ForestConfig(num_trees=100, min_node_size=10, ci_group_size=1, seed=11)
CFG = ForestConfig(num_trees=200, min_node_size=5, ci_group_size=2, seed=5)


@pytest.fixture(scope="module")
def fitted():
    ds = truncate_and_recode(make_dataset(n=400, seed=3), 4.0)
    nu = assemble_nuisances(ds, NCFG)
    return ds, nu, fit_csf(ds, CFG, nuisances=nu)


# node relabelling

def test_relabel_two_sample_example():
    np.testing.assert_allclose(relabel_node([1.0, -1.0], [1.0, 1.0]), [0.5, -0.5])


def test_relabel_zero_denominator():
    with pytest.raises(NotIdentifiedError):
        relabel_node([1.0, 2.0], [0.0, 0.0])


finite = st.floats(-10, 10, allow_nan=False)
positive = st.floats(0.01, 10, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30).flatmap(lambda k: st.tuples(arrays(float, k, elements=finite),
                                                      arrays(float, k, elements=positive))),
       st.floats(0.1, 10))
def test_relabel_centred_and_scale_invariant(ab, c):
    a, b = ab
    rho = relabel_node(a, b)
    assert abs(rho.sum()) <= 1e-9 * (1 + np.abs(a).sum() / b.sum())
    np.testing.assert_allclose(relabel_node(c * a, c * b), rho, rtol=1e-9, atol=1e-12)


# point estimates

def test_root_only_tree_is_constant_effect_solve(small_ds):
    rng = np.random.default_rng(0)
    parts = ScoreParts(rng.normal(size=small_ds.n), rng.uniform(0.1, 1.0, small_ds.n))
    cfg = ForestConfig(num_trees=1, min_node_size=small_ds.n // 2, ci_group_size=1, seed=2)
    forest = fit_forest_on_scores(small_ds.x, parts, cfg)
    tree = forest.tree(0)
    assert tree.feature.size == 1
    expected = solve_constant_tau(parts.subset(tree.leaf_sample)).tau_hat
    est, _, _, _, used = forest.predict_ratio(parts.a, parts.b, rng.uniform(size=(5, small_ds.p)))
    assert np.all(used == 1)
    np.testing.assert_allclose(est, expected, rtol=1e-12)


def test_estimating_equation_residual(fitted):
    ds, _, model = fitted
    queries = np.random.default_rng(1).uniform(size=(10, ds.p))
    tau = model.predict(queries).tau_hat
    for x, t in zip(queries, tau):
        alpha = model.forest.weights(x).dense(ds.n)
        resid = np.sum(alpha * (model.parts.a - t * model.parts.b))
        assert abs(resid) <= 1e-8 * np.sum(alpha * np.abs(model.parts.a))


def test_fit_is_deterministic(fitted):
    ds, nu, model = fitted
    again = fit_csf(ds, CFG, nuisances=nu)
    x = np.random.default_rng(2).uniform(size=(20, ds.p))
    np.testing.assert_array_equal(model.predict(x).tau_hat, again.predict(x).tau_hat)


def test_oob_predictions_cover_training_rows(fitted):
    ds, _, model = fitted
    pred = model.predict(oob=True)
    assert pred.tau_hat.shape == (ds.n,)
    assert np.all(pred.n_trees > 0)
    assert np.all(np.isfinite(pred.tau_hat))


@pytest.mark.filterwarnings("ignore:no censoring events")
def test_constant_effect_without_censoring():
    ds = truncate_and_recode(make_dataset(n=800, seed=8, censor=False, effect=0.0), 3.0)
    r = np.random.default_rng(8)
    # shift treated survival times by a constant so tau(x) is flat
    u = np.minimum(ds.u + 0.5 * ds.w, 3.0)
    ds = SurvivalDataset(ds.x, u, np.ones(ds.n, dtype=int), ds.w)
    model = fit_csf(ds, CFG.with_(num_trees=300), nuisance_config=NCFG)
    tau = model.predict(r.uniform(size=(200, ds.p))).tau_hat
    tau_const = solve_constant_tau(model.parts).tau_hat
    assert np.mean((tau - tau_const) ** 2) < np.mean(tau_const ** 2)


def test_root_denominator_zero_raises(small_ds):
    parts = ScoreParts(np.ones(small_ds.n), np.zeros(small_ds.n))
    with pytest.raises(NotIdentifiedError):
        fit_forest_on_scores(small_ds.x, parts, CFG)


def test_single_arm_rejected(small_ds):
    ds = SurvivalDataset(small_ds.x, small_ds.u, small_ds.delta, np.ones(small_ds.n, dtype=int))
    with pytest.raises(FitError):
        fit_csf(ds, CFG, nuisance_config=NCFG)


def test_splits_target_effect_modifier():
    """Column 0 moves the effect, column 1 only the baseline hazard."""
    hits = total = 0
    for seed in range(3):
        r = np.random.default_rng(100 + seed)
        n = 1500
        x = r.uniform(size=(n, 2))
        w = r.binomial(1, 0.5, n)
        rate = np.exp(1.5 * x[:, 1] - 2.0 * w * (x[:, 0] > 0.5))
        t = r.exponential(1.0 / rate)
        c = r.exponential(4.0, n)
        ds = truncate_and_recode(SurvivalDataset(x, np.minimum(t, c), (t <= c).astype(int), w), 2.0)
        model = fit_csf(ds, CFG.with_(num_trees=100, seed=seed), nuisance_config=NCFG.with_(seed=seed))
        roots = model.forest.feature[model.forest.node_ptr[:-1]]
        hits += int(np.sum(roots == 0))
        total += int(np.sum(roots >= 0))
    assert hits / total > 0.7


# variance and intervals

def test_interval_example():
    pred = CatePrediction(np.zeros(1), np.ones(1), np.ones(1), np.ones(1))
    lo, hi = pred.interval(0.95)
    np.testing.assert_allclose([lo[0], hi[0]], [-1.959964, 1.959964], atol=1e-6)


def test_level_zero_interval_is_degenerate(fitted):
    ds, _, model = fitted
    x = np.full((1, ds.p), 0.5)
    tau, lo, hi = predict_with_ci(model, x, level=0.0)
    np.testing.assert_array_equal(lo, tau)
    np.testing.assert_array_equal(hi, tau)


def test_interval_contains_estimate(fitted):
    ds, _, model = fitted
    x = np.random.default_rng(3).uniform(size=(10, ds.p))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tau, lo, hi = predict_with_ci(model, x, level=0.9)
        sigma = model.predict(x, variance=True).sigma_hat
    assert np.all(sigma >= 0)
    assert np.all((lo <= tau) & (tau <= hi))


def test_identical_trees_give_zero_variance(small_ds):
    parts = ScoreParts(np.full(small_ds.n, 2.0), np.ones(small_ds.n))
    cfg = ForestConfig(num_trees=20, min_node_size=5, ci_group_size=2, seed=1)
    forest = fit_forest_on_scores(small_ds.x, parts, cfg)
    model = CsfModel(forest, None, parts, cfg, 1.0, np.ones(small_ds.n), np.arange(small_ds.n))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pred = model.predict(np.full((3, small_ds.p), 0.5), variance=True)
    np.testing.assert_allclose(pred.tau_hat, 2.0)
    np.testing.assert_array_equal(pred.sigma_hat, 0.0)


def posterior_mean_by_quadrature(h, se):
    like = lambda v: stats.norm.pdf(h, loc=v, scale=se)
    hi = max(h, 0.0) + 12 * se
    mass = integrate.quad(like, 0, hi, limit=200)[0]
    return integrate.quad(lambda v: v * like(v), 0, hi, limit=200)[0] / mass


@pytest.mark.parametrize("h,se", [(1.0, 0.5), (0.0, 1.0), (-0.3, 1.0), (-2.0, 0.5), (5e-4, 3e-4)])
def test_debias_matches_truncated_normal_posterior(h, se):
    assert debias_variance([h], [se])[0] == pytest.approx(posterior_mean_by_quadrature(h, se), rel=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.floats(-50, 50), st.floats(1e-3, 10))
def test_debias_positive_and_above_raw(h, se):
    out = debias_variance([h, h + se], [se, se])
    assert 0 < out[0] < out[1]
    assert out[0] >= h


def test_debias_edge_cases():
    out = debias_variance([np.nan, -1.0, 2.0, 40.0], [1.0, 0.0, 0.0, 1.0])
    assert np.isnan(out[0])
    np.testing.assert_array_equal(out[1:3], [0.0, 2.0])
    assert out[3] == pytest.approx(40.0, abs=1e-12)


@pytest.mark.filterwarnings("ignore:little-bags variance")
def test_floor_mode_is_raw_difference_clipped(fitted):
    ds, _, model = fitted
    x = np.random.default_rng(4).uniform(size=(30, ds.p))
    est, vhat, h, h_se, _ = model.forest.predict_ratio(model.parts.a, model.parts.b, x, want_var=True)
    floor = model.predict(x, variance=True, debias="floor")
    bayes = model.predict(x, variance=True)
    np.testing.assert_allclose(floor.sigma_hat, np.sqrt(np.maximum(h, 0)) / np.abs(vhat), rtol=1e-12)
    np.testing.assert_allclose(bayes.sigma_hat, np.sqrt(debias_variance(h, h_se)) / np.abs(vhat), rtol=1e-12)
    assert np.all(bayes.sigma_hat > 0) and np.all(bayes.sigma_hat >= floor.sigma_hat)
    with pytest.raises(ValueError):
        model.predict(x, variance=True, debias="shrink")


def test_variance_requires_little_bags(fitted):
    ds, nu, _ = fitted
    model = fit_csf(ds, CFG.with_(num_trees=10, ci_group_size=1), nuisances=nu)
    with pytest.raises(CIUnavailableError):
        model.predict(np.full((1, ds.p), 0.5), variance=True)


# inverse-censoring-weighted baseline

def test_ipcw_all_censored_raises(small_ds):
    ds = SurvivalDataset(small_ds.x, small_ds.u, np.zeros(small_ds.n, dtype=int), small_ds.w)
    with pytest.raises(FitError, match="no complete cases"):
        fit_ipcw_cf(ds, CFG, nuisance_config=NCFG)


def test_ipcw_weights_bounded(fitted):
    ds, nu, _ = fitted
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = fit_ipcw_cf(ds, CFG.with_(num_trees=50), nuisances=nu)
    assert np.all(model.sample_weights >= 1.0)
    assert np.all(model.sample_weights <= IPCW_WEIGHT_CAP)
    np.testing.assert_array_equal(model.train_index, np.flatnonzero(ds.delta == 1))


@pytest.mark.filterwarnings("ignore:no censoring events")
def test_ipcw_matches_csf_without_censoring():
    ds = truncate_and_recode(make_dataset(n=300, seed=4, censor=False), 3.0)
    nu = assemble_nuisances(ds, NCFG)
    nu1 = nuisances_from_curves(nu.grid, nu.e_hat, np.ones_like(nu.s_c), nu.s_t, nu.clamp_floor)
    csf = fit_csf(ds, CFG.with_(num_trees=50), nuisances=nu1)
    ipcw = fit_ipcw_cf(ds, CFG.with_(num_trees=50), nuisances=nu1, m_hat=nu1.m_hat)
    np.testing.assert_array_equal(ipcw.sample_weights, 1.0)
    np.testing.assert_allclose(ipcw.parts.a, csf.parts.a, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(ipcw.parts.b, csf.parts.b, rtol=1e-12, atol=1e-12)
    x = np.random.default_rng(5).uniform(size=(20, ds.p))
    np.testing.assert_allclose(ipcw.predict(x).tau_hat, csf.predict(x).tau_hat, rtol=1e-9, atol=1e-12)


# persistence

@pytest.mark.parametrize("compact", [False, True])
def test_json_round_trip(fitted, compact):
    ds, _, model = fitted
    back = CsfModel.from_dict(json.loads(model_to_json(model, compact=compact)))
    x = np.random.default_rng(6).uniform(size=(15, ds.p))
    np.testing.assert_array_equal(back.predict(x).tau_hat, model.predict(x).tau_hat)
    np.testing.assert_array_equal(back.predict(oob=True).tau_hat, model.predict(oob=True).tau_hat)
    assert back.t_max == model.t_max


def test_query_dimension_checked(fitted):
    _, _, model = fitted
    with pytest.raises(ValueError):
        model.predict(np.zeros((1, model.p + 1)))
