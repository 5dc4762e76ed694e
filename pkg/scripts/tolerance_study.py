#!/usr/bin/env python3
"""Test-time solver study on one synthetic fit: how the CG tolerance and the
covariance-root rank move RMSE/NLL away from the Cholesky reference.

Trains once with exact inference, then sweeps (eps_test, k) at prediction
time and prints a tidy table. Reproduces the qualitative findings that mean
accuracy is governed by the tolerance while NLL needs a large root rank.
"""

import argparse

import numpy as np

from krygp import (
    CholeskyBackend,
    IterativeBackend,
    MllObjective,
    OptimizerConfig,
    TrainedModel,
    build_caches,
    fit,
    nll_metric,
    predict,
    rmse_metric,
)
from krygp.bench import default_init, split_and_standardize
from krygp.synth import sample_gp_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=600)
    ap.add_argument("--dim", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-epochs", type=int, default=40)
    args = ap.parse_args()

    ds, _ = sample_gp_dataset(args.n, args.dim, lengthscales=0.7, noise_var=0.1,
                              seed=args.seed, name="study")
    train, test, _ = split_and_standardize(ds, seed=args.seed, train_frac=0.8)

    objective = MllObjective(train.x, train.y, CholeskyBackend())
    theta, trace = fit(objective, default_init(train.dim).to_vector(),
                       OptimizerConfig(method="lbfgs", max_epochs=args.max_epochs))
    model = objective.model_for(theta)
    print(f"fit: {trace.grad_evaluations} grad evals, train MLL {-trace.best_loss:.4f}")

    cache = build_caches(model, train.n)
    pred = predict(cache, model, test.x)
    rmse_ref, nll_ref = rmse_metric(pred, test.y), nll_metric(pred, test.y)
    print(f"cholesky reference: rmse {rmse_ref:.4f} nll {nll_ref:.4f}\n")

    print(f"{'eps_test':>9} {'k':>5} {'rmse':>9} {'d_rmse':>9} {'nll':>9} {'d_nll':>9}")
    k_grid = [k for k in (15, 50, 100, 250, train.n) if k <= train.n]
    for eps in (1.0, 1e-1, 1e-2, 1e-3):
        for k in k_grid:
            it = TrainedModel(model.params, train.x, train.y,
                              IterativeBackend(cg_tol=eps, precond_rank=50))
            c = build_caches(it, k, cg_tol=eps)
            p = predict(c, it, test.x)
            rmse, nll = rmse_metric(p, test.y), nll_metric(p, test.y)
            print(f"{eps:>9.0e} {k:>5d} {rmse:>9.4f} {rmse - rmse_ref:>+9.2e} "
                  f"{nll:>9.4f} {nll - nll_ref:>+9.2e}")


if __name__ == "__main__":
    main()
