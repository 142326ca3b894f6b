import dataclasses

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings
from hypothesis import strategies as st

from causalsurv.blp import best_linear_projection, compute_gamma, naive_projection
from causalsurv.csf import fit_csf, fit_forest_on_scores
from causalsurv.data import truncate_and_recode
from causalsurv.errors import SingularDesignError
from causalsurv.forest import ForestConfig
from causalsurv.nuisance import assemble_nuisances
from causalsurv.scoring import ScoreParts

from conftest import make_dataset

NCFG = ForestConfig(num_trees=100, min_node_size=10, ci_group_size=1, seed=11)
CFG = ForestConfig(num_trees=100, min_node_size=5, ci_group_size=2, seed=5)


@pytest.fixture(scope="module")
def fitted():
    ds = truncate_and_recode(make_dataset(n=300, seed=9), 4.0)
    return ds, fit_csf(ds, CFG, nuisances=assemble_nuisances(ds, NCFG))


# doubly robust scores

def test_gamma_formula(fitted):
    ds, model = fitted
    tau = model.predict(oob=True).tau_hat
    e = model.nuisances.e_hat
    expected = tau + (model.parts.a - tau * model.parts.b) / (e * (1 - e))
    np.testing.assert_allclose(compute_gamma(model, ds), expected, rtol=1e-12)


def test_gamma_zero_residual_equals_tau(fitted):
    ds, model = fitted
    b = model.parts.b
    parts = ScoreParts(0.7 * b, b)
    forest = fit_forest_on_scores(ds.x, parts, CFG)
    nu = dataclasses.replace(model.nuisances, e_hat=np.full(ds.n, 0.5))
    flat = dataclasses.replace(model, forest=forest, parts=parts, nuisances=nu)
    np.testing.assert_allclose(compute_gamma(flat, ds), 0.7, rtol=1e-12)


def test_gamma_rejects_ipcw_model(fitted):
    ds, model = fitted
    with pytest.raises(ValueError):
        compute_gamma(dataclasses.replace(model, method="ipcw"), ds)


# projection regression

def test_exact_linear_recovery():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(50, 2))
    gamma = 1.5 + A @ np.array([2.0, -0.5])
    res = best_linear_projection(gamma, A)
    np.testing.assert_allclose(res.coef, [1.5, 2.0, -0.5], atol=1e-12)
    np.testing.assert_allclose(res.std_errs, 0.0, atol=1e-10)


def test_intercept_only_is_mean():
    gamma = np.random.default_rng(1).normal(size=40)
    for A in (None, np.empty((40, 0))):
        res = best_linear_projection(gamma, A)
        assert res.beta0 == pytest.approx(gamma.mean(), rel=1e-14)
        assert res.beta.size == 0


@pytest.mark.parametrize("hc", ["HC0", "HC1", "HC2", "HC3"])
def test_robust_errors_match_statsmodels(hc):
    rng = np.random.default_rng(2)
    A = rng.normal(size=(80, 3))
    gamma = A @ [1.0, 0.0, -1.0] + rng.normal(size=80) * (1 + np.abs(A[:, 0]))
    res = best_linear_projection(gamma, A, hc=hc)
    ref = sm.OLS(gamma, sm.add_constant(A)).fit(cov_type=hc)
    np.testing.assert_allclose(res.coef, ref.params, rtol=1e-10)
    np.testing.assert_allclose(res.std_errs, ref.bse, rtol=1e-10)
    np.testing.assert_allclose(res.cov, ref.cov_params(), rtol=1e-9, atol=1e-14)


def test_table_columns():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(30, 2))
    res = best_linear_projection(A[:, 0] + rng.normal(size=30), A, names=["x1", "x2"])
    rows = res.table()
    assert [r[0] for r in rows] == ["(Intercept)", "x1", "x2"]
    assert all(0.0 <= r[4] <= 1.0 for r in rows)
    ci = res.conf_int(0.95)
    assert np.all(ci[:, 0] <= res.coef) and np.all(res.coef <= ci[:, 1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.integers(0, 2))
def test_normal_equations_and_rescaling(seed, c, j):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(25, 3))
    gamma = rng.normal(size=25)
    res = best_linear_projection(gamma, A)
    D = np.column_stack([np.ones(25), A])
    resid = gamma - D @ res.coef
    assert np.all(np.abs(D.T @ resid) <= 1e-8 * (1 + np.abs(D.T) @ np.abs(gamma)))
    A2 = A.copy()
    A2[:, j] *= c
    res2 = best_linear_projection(gamma, A2)
    np.testing.assert_allclose(res2.beta[j], res.beta[j] / c, rtol=1e-7, atol=1e-10)
    D2 = np.column_stack([np.ones(25), A2])
    np.testing.assert_allclose(D2 @ res2.coef, D @ res.coef, rtol=1e-8, atol=1e-9)


def test_rank_deficient_design():
    A = np.random.default_rng(4).normal(size=(20, 1))
    with pytest.raises(SingularDesignError):
        best_linear_projection(np.ones(20), np.column_stack([A, 2 * A]))
    with pytest.raises(SingularDesignError):
        best_linear_projection(np.ones(20), np.ones((20, 1)))
    with pytest.raises(SingularDesignError):
        best_linear_projection(np.ones(2), np.ones((2, 1)) * [[1.0], [2.0]])


def test_bad_arguments():
    with pytest.raises(ValueError):
        best_linear_projection(np.ones(5), np.ones((4, 1)))
    with pytest.raises(ValueError):
        best_linear_projection(np.arange(5.0), hc="HC9")


def test_naive_projection_is_plain_regression():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(30, 1))
    tau = 1.0 + A[:, 0] + 0.1 * rng.normal(size=30)
    np.testing.assert_array_equal(naive_projection(tau, A).coef, best_linear_projection(tau, A).coef)


def test_projection_on_fitted_model(fitted):
    ds, model = fitted
    res = best_linear_projection(compute_gamma(model, ds), ds.x[:, :2])
    assert res.n == ds.n
    assert np.all(np.isfinite(res.std_errs)) and np.all(res.std_errs > 0)

