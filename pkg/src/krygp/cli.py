"""Command-line harness: fit, predict, sweep, report."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import bench, gp
from .errors import KrygpError
from .optim import OptimizerConfig, fit as run_fit


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(","))


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(","))


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(","))


def _add_data_args(p, multi=False):
    if multi:
        p.add_argument("--data", action="append", required=True,
                       help="dataset file (repeatable)")
    else:
        p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--target", default=None,
                   help="target column name or index (default: last column)")


def _add_fit_args(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--subsample", type=int, default=4000)
    p.add_argument("--backend", choices=["cholesky", "iterative"], default="iterative")
    p.add_argument("--cg-tol", type=float, default=1e-3, help="training CG tolerance")
    p.add_argument("--cg-tol-test", type=float, default=None,
                   help="test-time CG tolerance (default: --cg-tol)")
    p.add_argument("--precond-rank", type=int, default=50)
    p.add_argument("--lanczos-rank", type=int, default=None,
                   help="covariance-root rank (default: min(n, 5000))")
    p.add_argument("--max-cg-iters", type=int, default=500)
    p.add_argument("--probes", type=int, default=10)
    p.add_argument("--optimizer", choices=["adam", "lbfgs"], default="adam")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--max-epochs", type=int, default=2000)
    p.add_argument("--lbfgs-memory", type=int, default=10)
    p.add_argument("--precision", choices=["f32", "f64"], default="f64")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="krygp",
                                     description="GP regression benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model on one train/test split")
    _add_data_args(p_fit)
    _add_fit_args(p_fit)
    p_fit.add_argument("--out", required=True, help="output directory")

    p_pred = sub.add_parser("predict", help="predict from a saved checkpoint")
    p_pred.add_argument("--checkpoint", required=True)
    _add_data_args(p_pred)
    p_pred.add_argument("--eval", required=True, help="file of points to predict")
    p_pred.add_argument("--cg-tol-test", type=float, default=None)
    p_pred.add_argument("--lanczos-rank", type=int, default=None)
    p_pred.add_argument("--out", required=True)

    p_sweep = sub.add_parser("sweep", help="run the solver-hyperparameter grid")
    _add_data_args(p_sweep, multi=True)
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--splits", type=int, default=5)
    p_sweep.add_argument("--train-frac", type=float, default=0.8)
    p_sweep.add_argument("--subsample", type=int, default=4000)
    p_sweep.add_argument("--cg-tol", type=_float_list, default=None,
                         help="training tolerance grid, comma separated")
    p_sweep.add_argument("--cg-tol-test", type=_float_list, default=None,
                         help="test tolerance grid (default: same as train)")
    p_sweep.add_argument("--precond-rank", type=_int_list, default=None)
    p_sweep.add_argument("--lanczos-rank", type=_int_list, default=None)
    p_sweep.add_argument("--max-cg-iters", type=int, default=500)
    p_sweep.add_argument("--probes", type=int, default=10)
    p_sweep.add_argument("--optimizer", type=_str_list, default=None,
                         help="optimizer set, e.g. adam,lbfgs")
    p_sweep.add_argument("--lr", type=float, default=0.05)
    p_sweep.add_argument("--max-epochs", type=int, default=2000)
    p_sweep.add_argument("--lbfgs-memory", type=int, default=10)
    p_sweep.add_argument("--precision", type=_str_list, default=None)
    p_sweep.add_argument("--preset", choices=sorted(bench.PRESETS), default=None)
    p_sweep.add_argument("--no-baseline", action="store_true",
                         help="skip the per-split Cholesky baseline")
    p_sweep.add_argument("--out", required=True)

    p_rep = sub.add_parser("report", help="emit tidy tables from sweep results")
    p_rep.add_argument("--results", required=True, help="results.jsonl from a sweep")
    p_rep.add_argument("--kind", choices=bench.REPORT_KINDS, required=True)
    p_rep.add_argument("--out", required=True)
    return parser


def _backend_from_args(args, seed):
    if args.backend == "cholesky":
        return gp.CholeskyBackend()
    return gp.IterativeBackend(cg_tol=args.cg_tol, precond_rank=args.precond_rank,
                               max_cg_iters=args.max_cg_iters, num_probes=args.probes,
                               seed=seed)


def cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = bench.load_dataset(args.data, target=args.target)
    ds = bench.subsample_dataset(ds, args.subsample, args.seed)
    train, test, stats = bench.split_and_standardize(ds, args.seed, args.train_frac)

    backend = _backend_from_args(args, args.seed)
    objective = gp.MllObjective(train.x, train.y, backend, args.precision)
    cfg = OptimizerConfig(method=args.optimizer, learning_rate=args.lr,
                          max_epochs=args.max_epochs, lbfgs_memory=args.lbfgs_memory)
    theta, trace = run_fit(objective, bench.default_init(train.dim).to_vector(), cfg)
    model = objective.model_for(theta)

    rank = args.lanczos_rank or min(train.n, 5000)
    cache = gp.build_caches(model, min(rank, train.n), cg_tol=args.cg_tol_test)
    pred = gp.predict(cache, model, test.x, include_noise=True)

    standardization = {**stats.to_dict(), "train_frac": args.train_frac,
                       "subsample": args.subsample}
    gp.save_checkpoint(model, out / "model.json",
                       standardization=standardization, seed=args.seed)
    (out / "fit_trace.json").write_text(json.dumps({
        "losses": trace.losses,
        "grad_evaluations": trace.grad_evaluations,
        "stop_reason": trace.stop_reason,
        "fallback_steps": trace.fallback_steps,
        "step_times": trace.step_times,
    }, indent=2) + "\n")

    print(f"fit: n_train={train.n} n_test={test.n} d={train.dim}")
    print(f"train_mll={-trace.best_loss:.6f} stop={trace.stop_reason} "
          f"grad_evals={trace.grad_evaluations}")
    print(f"test_rmse={gp.rmse_metric(pred, test.y):.6f} "
          f"test_nll={gp.nll_metric(pred, test.y):.6f} (standardized units)")
    print(f"checkpoint: {out / 'model.json'}")
    return 0


def cmd_predict(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = gp.load_checkpoint(args.checkpoint)
    if ckpt.standardization is None:
        raise KrygpError("checkpoint has no standardization record")
    stats = bench.Standardization.from_dict(ckpt.standardization)

    # rebuild the conditioning set exactly as `fit` prepared it
    train_raw = bench.load_dataset(args.data, target=args.target)
    train_raw = bench.subsample_dataset(
        train_raw, int(ckpt.standardization.get("subsample", train_raw.n)), ckpt.seed or 0)
    train, _, _ = bench.split_and_standardize(
        train_raw, ckpt.seed or 0, float(ckpt.standardization.get("train_frac", 0.8)))
    model = ckpt.to_model(train.x, train.y)

    eval_ds = bench.load_dataset(args.eval, target=args.target)
    eval_x = stats.apply_x(eval_ds.x)
    rank = args.lanczos_rank or min(train.n, 5000)
    cache = gp.build_caches(model, min(rank, train.n), cg_tol=args.cg_tol_test)
    pred = gp.predict(cache, model, eval_x, include_noise=True)

    pred_path = out / "predictions.csv"
    with pred_path.open("w") as fh:
        fh.write("mean,variance\n")
        for m, v in zip(pred.mean, pred.variance):
            fh.write(f"{float(m)!r},{float(v)!r}\n")
    y_std = stats.apply_y(eval_ds.y)
    print(f"wrote {pred_path} ({len(pred.mean)} rows; standardized units)")
    print(f"rmse={gp.rmse_metric(pred, y_std):.6f} nll={gp.nll_metric(pred, y_std):.6f}")
    return 0


def cmd_sweep(args) -> int:
    if args.preset:
        cfg = bench.preset_config(args.preset)
    else:
        cfg = bench.SweepConfig()
    overrides = {
        "eps_train_grid": args.cg_tol,
        "eps_test_grid": args.cg_tol_test,
        "precond_ranks": args.precond_rank,
        "lanczos_ranks": args.lanczos_rank,
        "optimizers": args.optimizer,
        "precisions": args.precision,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    cfg = replace(cfg, splits=args.splits, seed=args.seed, train_frac=args.train_frac,
                  subsample=args.subsample, max_epochs=args.max_epochs,
                  learning_rate=args.lr, lbfgs_memory=args.lbfgs_memory,
                  max_cg_iters=args.max_cg_iters, num_probes=args.probes,
                  include_cholesky_baseline=not args.no_baseline)

    datasets = [bench.load_dataset(p, target=args.target) for p in args.data]
    results = bench.run_sweep(cfg, datasets, args.out)
    ok = sum(1 for r in results if r.error is None)
    failed = sum(1 for r in results if r.error is not None)
    print(f"sweep complete: {ok} cells ok, {failed} failed; "
          f"summary at {Path(args.out) / 'summary.csv'}")
    return 0


def cmd_report(args) -> int:
    results = bench.load_results(args.results)
    path = bench.emit_report(results, args.kind, args.out)
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"fit": cmd_fit, "predict": cmd_predict,
                "sweep": cmd_sweep, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except KrygpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
