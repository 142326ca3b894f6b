import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalsurv.errors import FitError, NoOOBError
from causalsurv.forest import (CausalSplitter, Forest, ForestConfig, RegressionSplitter, SurvivalSplitter,
                               best_split, forest_weights, get_kernels, grow_forest, oob_predict)
from causalsurv.forest._pykernels import SplitMix64, draw_features


def reg_forest(X, y, **kw):
    cfg = ForestConfig(**{"num_trees": 20, "ci_group_size": 2, "min_node_size": 5, "seed": 1, **kw})
    return grow_forest(X, RegressionSplitter(y), cfg, threads=1)


def test_little_bag_structure():
    r = np.random.default_rng(0)
    X = r.uniform(size=(100, 2))
    f = reg_forest(X, X[:, 0], num_trees=4, ci_group_size=2)
    assert list(f.bag_ids) == [0, 0, 1, 1]
    for bag in (0, 1):
        t0, t1 = f.tree(2 * bag), f.tree(2 * bag + 1)
        sub0 = np.union1d(t0.split_sample, t0.leaf_sample)
        sub1 = np.union1d(t1.split_sample, t1.leaf_sample)
        assert sub0.size == sub1.size == 50
        # both subsamples are drawn from the bag's 50-point half-sample
        assert np.union1d(sub0, sub1).size <= 50


def test_subsample_size():
    X = np.random.default_rng(1).uniform(size=(101, 2))
    f = reg_forest(X, X[:, 0], ci_group_size=1, sample_fraction=0.3)
    t = f.tree(0)
    assert t.split_sample.size + t.leaf_sample.size == math.ceil(0.3 * 101)


def test_constant_response_gives_stumps():
    X = np.random.default_rng(2).uniform(size=(200, 3))
    f = reg_forest(X, np.full(200, 3.0))
    assert np.all(f.feature == -1)
    assert f.feature.size == f.num_trees


def test_same_seed_identical():
    X = np.random.default_rng(3).uniform(size=(300, 3))
    y = X[:, 0] + np.random.default_rng(4).normal(size=300)
    a, b = reg_forest(X, y), reg_forest(X, y)
    for name in ("feature", "threshold", "left", "right", "split_samples", "leaf_samples"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c = reg_forest(X, y, seed=2)
    assert not np.array_equal(a.threshold, c.threshold)


def test_threads_do_not_change_forest():
    X = np.random.default_rng(3).uniform(size=(300, 3))
    y = X[:, 0]
    cfg = ForestConfig(num_trees=20, ci_group_size=2, seed=9)
    a = grow_forest(X, RegressionSplitter(y), cfg, threads=1)
    b = grow_forest(X, RegressionSplitter(y), cfg, threads=4)
    np.testing.assert_array_equal(a.threshold, b.threshold)
    np.testing.assert_array_equal(a.leaf_samples, b.leaf_samples)


def test_too_small_raises():
    X = np.zeros((5, 1))
    with pytest.raises(FitError):
        reg_forest(X, np.arange(5.0), min_node_size=5)


def test_honesty_and_partition():
    r = np.random.default_rng(5)
    X = r.uniform(size=(400, 3))
    f = reg_forest(X, X[:, 1] + r.normal(size=400))
    for b in range(f.num_trees):
        t = f.tree(b)
        assert np.intersect1d(t.split_sample, t.leaf_sample).size == 0
        leaves = t.leaves()
        members = np.concatenate(list(leaves.values()))
        assert np.array_equal(np.sort(members), np.sort(t.leaf_sample))
        assert np.all(t.feature[list(leaves)] == -1)
    # every query lands in exactly one leaf per tree
    leaves = f.route(r.uniform(size=(50, 3)))
    assert leaves.shape == (50, f.num_trees)
    assert np.all(f.feature[leaves] == -1)


def _child_counts(t, X):
    """Split-sample counts at every internal node of a tree."""
    out = []

    def walk(node, idx):
        if t.feature[node] < 0:
            return
        go = X[idx, t.feature[node]] <= t.threshold[node]
        out.append((idx.size, go.sum(), (~go).sum()))
        walk(t.left[node], idx[go])
        walk(t.right[node], idx[~go])

    walk(0, t.split_sample)
    return out


def test_child_balance_respected():
    r = np.random.default_rng(6)
    X = r.uniform(size=(600, 2))
    cfg = dict(min_node_size=7, child_balance=0.2)
    f = reg_forest(X, np.sin(6 * X[:, 0]) + 0.1 * r.normal(size=600), **cfg)
    checked = 0
    for b in range(f.num_trees):
        for parent, nl, nr in _child_counts(f.tree(b), X):
            need = max(7, math.ceil(0.2 * parent))
            assert nl >= need and nr >= need
            checked += 1
    assert checked > 0


# --- best_split -----------------------------------------------------------


def test_best_split_separated():
    X = np.array([[0.0, 5.0], [1.0, 3.0], [2.0, 4.0], [3.0, 6.0]])
    rho = np.array([1.0, 1.0, -1.0, -1.0])
    cfg = ForestConfig(min_node_size=1, child_balance=0.1)
    dec = best_split(X, np.arange(4), rho, cfg, features=[0, 1])
    assert dec.feature == 0
    assert dec.gain == pytest.approx(4.0)
    assert dec.threshold == pytest.approx(1.5)
    assert dec.n_left == 2


def test_best_split_zero_rho():
    X = np.random.default_rng(0).uniform(size=(20, 2))
    assert best_split(X, np.arange(20), np.zeros(20), ForestConfig(min_node_size=2), features=[0, 1]) is None


def test_best_split_selects_informative_feature():
    hits = 0
    cfg = ForestConfig(min_node_size=5, mtry=6)
    for seed in range(100):
        r = np.random.default_rng(seed)
        X = r.uniform(size=(200, 6))
        X[:, 3] = r.binomial(1, 0.5, 200)
        rho = 0.8 * (2 * X[:, 3] - 1) + r.normal(size=200)
        dec = best_split(X, np.arange(200), rho, cfg, rng=seed)
        hits += dec is not None and dec.feature == 3
    assert hits / 100 > 0.9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_best_split_scale_invariant(seed, scale):
    r = np.random.default_rng(seed)
    X = r.uniform(size=(40, 3))
    rho = r.normal(size=40) + X[:, 0]
    cfg = ForestConfig(min_node_size=3)
    a = best_split(X, np.arange(40), rho, cfg, features=[0, 1, 2])
    b = best_split(X, np.arange(40), scale * rho, cfg, features=[0, 1, 2])
    assert (a is None) == (b is None)
    if a is not None:
        assert (a.feature, a.threshold) == (b.feature, b.threshold)
        assert b.gain == pytest.approx(scale ** 2 * a.gain, rel=1e-9)


def test_feature_draw_is_permutation_prefix():
    f = draw_features(SplitMix64(7), 10, 4)
    assert len(set(f)) == 4 and all(0 <= j < 10 for j in f)


# --- forest weights -------------------------------------------------------


def manual_forest():
    X = np.arange(6.0).reshape(-1, 1)
    cfg = ForestConfig(num_trees=2, ci_group_size=1, min_node_size=1)
    # tree 0 splits at 1.5, tree 1 at 3.5; leaves hold all six samples
    return Forest(cfg, X, node_ptr=[0, 3, 6],
                  feature=[0, -1, -1, 0, -1, -1], threshold=[1.5, 0, 0, 3.5, 0, 0],
                  left=[1, -1, -1, 1, -1, -1], right=[2, -1, -1, 2, -1, -1],
                  split_ptr=[0, 0, 0], split_samples=[],
                  leaf_sample_ptr=[0, 6, 12], leaf_samples=list(range(6)) * 2)


def test_weights_arithmetic():
    fw = forest_weights(manual_forest(), [0.5])
    d = fw.dense(6)
    assert d[0] == pytest.approx(0.375)
    assert d[2] == pytest.approx(0.125)
    assert d.sum() == pytest.approx(1.0, abs=1e-12)
    assert fw.n_trees == 2


def test_weights_single_leaf():
    X = np.random.default_rng(0).uniform(size=(10, 2))
    cfg = ForestConfig(num_trees=1, ci_group_size=1, min_node_size=1)
    f = Forest(cfg, X, [0, 1], [-1], [0.0], [-1], [-1], [0, 0], [], [0, 10], np.arange(10))
    np.testing.assert_allclose(forest_weights(f, X[3]).dense(10), np.full(10, 0.1))


def test_weights_dimension_check():
    with pytest.raises(ValueError):
        forest_weights(manual_forest(), [0.1, 0.2])


def test_weights_sum_to_one():
    r = np.random.default_rng(7)
    X = r.uniform(size=(300, 3))
    f = reg_forest(X, X[:, 0] + r.normal(size=300), num_trees=40)
    for x in r.uniform(size=(100, 3)):
        fw = forest_weights(f, x)
        assert np.all(fw.weight >= 0)
        assert fw.weight.sum() == pytest.approx(1.0, abs=1e-12)


def test_weights_match_ratio_kernel():
    r = np.random.default_rng(8)
    X = r.uniform(size=(300, 3))
    y = X[:, 0] + r.normal(size=300)
    f = reg_forest(X, y, num_trees=30)
    xq = r.uniform(size=(5, 3))
    est, _ = f.predict_mean(y, xq)
    for q in range(5):
        fw = forest_weights(f, xq[q])
        assert est[q] == pytest.approx(float(fw.weight @ y[fw.index]), rel=1e-10)


def test_oob_tree_count_and_exclusion():
    r = np.random.default_rng(9)
    X = r.uniform(size=(400, 2))
    f = reg_forest(X, X[:, 0], num_trees=500, ci_group_size=1, min_node_size=5)
    counts = [oob_predict(f, i).n_trees for i in range(0, 400, 40)]
    assert 200 < np.mean(counts) < 300
    fw = oob_predict(f, 5)
    assert 5 not in set(fw.index.tolist())


def test_oob_regression_accuracy():
    r = np.random.default_rng(10)
    X = r.uniform(size=(2000, 3))
    y = X[:, 0]
    f = reg_forest(X, y, num_trees=100, ci_group_size=1)
    est, used = f.predict_mean(y, X, exclude=np.arange(2000))
    assert np.all(used > 0)
    assert np.mean((est - y) ** 2) < 0.05 * np.var(y)


def test_no_oob_with_full_sample():
    X = np.random.default_rng(11).uniform(size=(50, 2))
    f = reg_forest(X, X[:, 0], num_trees=4, ci_group_size=1, sample_fraction=1.0, honesty=False)
    with pytest.raises(NoOOBError):
        oob_predict(f, 0)


def test_bootstrap_forest():
    r = np.random.default_rng(12)
    X = r.uniform(size=(300, 2))
    y = X[:, 0] + 0.1 * r.normal(size=300)
    f = reg_forest(X, y, num_trees=30, ci_group_size=1, sample_fraction=1.0, honesty=False, bootstrap=True)
    t = f.tree(0)
    # duplicates appear in the leaf population, split samples are unique
    assert t.leaf_sample.size == 300
    assert np.unique(t.split_sample).size == t.split_sample.size < 300
    fw = forest_weights(f, X[0])
    assert fw.weight.sum() == pytest.approx(1.0, abs=1e-12)
    est, _ = f.predict_mean(y, X[:5])
    for q in range(5):
        w = forest_weights(f, X[q])
        assert est[q] == pytest.approx(float(w.weight @ y[w.index]), rel=1e-10)
    with pytest.raises(ValueError):
        ForestConfig(bootstrap=True).validate()


def test_forest_round_trip():
    r = np.random.default_rng(13)
    X = r.uniform(size=(200, 3))
    f = reg_forest(X, X[:, 0])
    g = Forest.from_dict(f.to_dict())
    np.testing.assert_array_equal(f.route(X), g.route(X))
    np.testing.assert_array_equal(f.leaf_members, g.leaf_members)


@pytest.mark.parametrize("kw,msg", [
    ({"num_trees": 0}, "num_trees"), ({"child_balance": 0.5}, "child_balance"),
    ({"num_trees": 3, "ci_group_size": 2}, "divisible"), ({"sample_fraction": 0.7}, "sample_fraction"),
])
def test_config_validation(kw, msg):
    with pytest.raises(ValueError, match=msg):
        ForestConfig(**kw).validate()


def test_mtry_validation():
    with pytest.raises(ValueError, match="mtry"):
        ForestConfig(mtry=4).validate(p=3)
    assert ForestConfig().resolved_mtry(5) == 5
    assert ForestConfig().resolved_mtry(1000) == 52


# --- backend equivalence --------------------------------------------------

try:
    get_kernels("compiled")
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False


def splitter_cases(n=400, seed=0):
    r = np.random.default_rng(seed)
    X = r.uniform(size=(n, 4))
    X[:, 2] = np.round(X[:, 2] * 5)  # ties
    tidx = r.integers(0, 30, n)
    event = r.binomial(1, 0.7, n).astype(float)
    return X, {
        "regression": RegressionSplitter(X[:, 0] + r.normal(size=n)),
        "causal": CausalSplitter(r.normal(size=n) + X[:, 1], r.uniform(0.1, 1.0, n)),
        "survival": SurvivalSplitter(tidx, event, 30, event),
        "weighted": RegressionSplitter(X[:, 0], r.uniform(0.5, 2.0, n)),
    }


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled extension not built")
@pytest.mark.parametrize("name", ["regression", "causal", "survival", "weighted"])
@pytest.mark.parametrize("honesty", [True, False])
def test_backends_grow_identical_trees(name, honesty):
    X, cases = splitter_cases()
    cfg = ForestConfig(num_trees=8, ci_group_size=2 if honesty else 1, honesty=honesty, min_node_size=3,
                       mtry=2, seed=21)
    a = grow_forest(X, cases[name], cfg, threads=1, backend="python")
    b = grow_forest(X, cases[name], cfg, threads=1, backend="compiled")
    for attr in ("feature", "threshold", "left", "right"):
        np.testing.assert_array_equal(getattr(a, attr), getattr(b, attr))


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled extension not built")
def test_backends_predict_agree():
    X, cases = splitter_cases(seed=1)
    cfg = ForestConfig(num_trees=10, ci_group_size=2, min_node_size=3, seed=4)
    fa = grow_forest(X, cases["causal"], cfg, threads=1, backend="python")
    fb = grow_forest(X, cases["causal"], cfg, threads=1, backend="compiled")
    num = np.random.default_rng(2).normal(size=X.shape[0])
    den = np.ones(X.shape[0])
    ex = np.arange(X.shape[0])
    ra = fa.predict_ratio(num, den, X, exclude=ex, want_var=True)
    rb = fb.predict_ratio(num, den, X, exclude=ex, want_var=True)
    assert len(ra) == len(rb) == 5
    for u, v in zip(ra, rb):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-15)
    tidx = np.random.default_rng(3).integers(0, 12, X.shape[0])
    ev = np.ones(X.shape[0])
    ka = fa.km_curves(X[:20], tidx, ev, ev, 12, exclude=ex[:20])
    kb = fb.km_curves(X[:20], tidx, ev, ev, 12, exclude=ex[:20])
    np.testing.assert_allclose(ka, kb, rtol=1e-12, atol=1e-15)
