import numpy as np
import pytest

from causalsurv.data import SurvivalDataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def make_dataset(n=200, p=3, seed=0, censor=True, effect=1.0):
    """Exponential failure times with a covariate-dependent effect."""
    r = np.random.default_rng(seed)
    x = r.uniform(size=(n, p))
    w = r.binomial(1, 0.5, n)
    rate = np.exp(-0.5 * x[:, 0] - effect * w * x[:, 1])
    t = r.exponential(1.0 / rate)
    c = r.exponential(3.0, n) if censor else np.full(n, np.inf)
    u = np.minimum(t, c)
    return SurvivalDataset(x, u, (t <= c).astype(int), w)


@pytest.fixture
def small_ds():
    return make_dataset()
