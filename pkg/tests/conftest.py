import numpy as np
import pytest

from krygp import HyperParams, matern52


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_params(rng, dim, lo=0.05, hi=5.0, mean=0.0):
    """HyperParams with constrained values drawn log-uniformly in [lo, hi]."""
    draw = lambda size=None: np.exp(rng.uniform(np.log(lo), np.log(hi), size))
    return HyperParams.from_constrained(draw(dim), float(draw()), float(draw()), mean)


def random_gp_data(rng, n, dim, params, jitter=1e-10):
    """Inputs and targets drawn from the prior the params describe."""
    x = rng.normal(size=(n, dim))
    K = matern52(x, x, params)
    K[np.diag_indices_from(K)] += jitter
    f = np.linalg.cholesky(K) @ rng.normal(size=n)
    y = params.mean_constant + f + np.sqrt(params.noise) * rng.normal(size=n)
    return x, y


def dense_khat(x, params):
    """Dense shifted kernel matrix, assembled independently of the operators."""
    K = np.asarray(matern52(x, x, params))
    K[np.diag_indices_from(K)] += params.noise
    return K
