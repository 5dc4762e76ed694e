"""Synthetic regression problems drawn from the model's own prior.

Used by the experiment scripts and the test suite as stand-ins for
benchmark data files at desk scale.
"""

from __future__ import annotations

import numpy as np

from .bench import Dataset
from .kernels import HyperParams, matern52


def sample_gp_dataset(n: int, dim: int, *, lengthscales=1.0, outputscale=1.0,
                      noise_var=0.1, seed=0, name="synthetic",
                      mean_constant=0.0) -> tuple[Dataset, HyperParams]:
    """Draw (X, y) from a Matern-5/2 GP with the given constrained parameters.

    Returns the dataset together with the generating hyperparameters (handy
    for warm-started fits in experiments).
    """
    rng = np.random.default_rng(seed)
    params = HyperParams.from_constrained(
        np.broadcast_to(np.asarray(lengthscales, float), (dim,)),
        outputscale, noise_var, mean_constant)
    x = rng.normal(size=(n, dim))
    K = matern52(x, x, params)
    K[np.diag_indices_from(K)] += 1e-10  # draw jitter only
    L = np.linalg.cholesky(K)
    f = L @ rng.normal(size=n)
    y = mean_constant + f + np.sqrt(noise_var) * rng.normal(size=n)
    return Dataset(name, x, y, {"generator": "matern52-prior", "seed": seed,
                                "noise_var": noise_var}), params
