"""Benchmark harness: data ingestion, standardization, solver-hyperparameter
sweeps, and tidy report tables.

Sweep cells are keyed by (dataset, split, backend, eps_train, eps_test, w, k,
optimizer, precision); results append to a line-delimited record store so an
interrupted sweep resumes by key. The flat summary table contains only
quantities that are pure functions of (config, data bytes, seed) -- wall
times stay in the record store -- so two identical sweep invocations produce
byte-identical summaries.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractViolation, IngestionError
from .gp import (
    CholeskyBackend,
    IterativeBackend,
    MllObjective,
    TrainedModel,
    build_caches,
    nll_metric,
    predict,
    rmse_metric,
)
from .kernels import HyperParams
from .optim import OptimizerConfig, fit

SUMMARY_COLUMNS = [
    "dataset", "split", "backend", "eps_train", "eps_test", "w", "k",
    "optimizer", "precision", "train_mll", "rmse", "nll", "cg_iters_mean",
    "clamped_count", "grad_evals",
]
RECORD_COLUMNS = SUMMARY_COLUMNS + ["wall_time_s"]

REPORT_KINDS = ("nll_vs_rank", "rmse_vs_tolerance", "loss_trajectories",
                "optimizer_comparison")

# Preset solver settings: the library-default baseline the sweep exists to
# interrogate, and the stable-training alternative.
PRESETS = {
    "gpytorch-defaults": {"eps_train": 1.0, "eps_test": 1e-3, "k": 100, "w": 15},
    "recommended": {"eps_train": 1e-3, "eps_test": 1e-2, "k": 5000, "w": 50},
}

MIN_SWEEP_POINTS = 10


@dataclass
class Dataset:
    """A named regression problem with provenance for reproducibility."""

    name: str
    x: np.ndarray
    y: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ContractViolation(
                f"dataset shapes inconsistent: x {self.x.shape}, y {self.y.shape}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ContractViolation("dataset contains NaN/Inf after ingestion")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def load_dataset(path, target=None, name: str | None = None) -> Dataset:
    """Parse a delimited numeric text file into a Dataset.

    The delimiter (comma or whitespace) and an optional header row are
    detected; `target` selects the target column by header name or integer
    index (default: last column). Rows with missing or non-numeric values
    are dropped and counted in a warning.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    if not lines:
        raise IngestionError(f"{path} contains no data lines")

    delim = "," if "," in lines[0][1] else None

    def tokens(line):
        return [t.strip() for t in (line.split(",") if delim else line.split())]

    first = tokens(lines[0][1])

    def numeric(tok):
        try:
            v = float(tok)
        except ValueError:
            return None
        return v if np.isfinite(v) else None

    header = None
    if any(numeric(t) is None for t in first):
        header = first
        lines = lines[1:]
        if not lines:
            raise IngestionError(f"{path} has a header but no data rows")

    ncols = len(header) if header else len(first)
    if ncols < 2:
        raise IngestionError(f"{path}: need at least one feature column plus a target")

    if target is None:
        target_idx = ncols - 1
    elif isinstance(target, int) or (isinstance(target, str) and target.lstrip("-").isdigit()):
        target_idx = int(target)
        if not -ncols <= target_idx < ncols:
            raise IngestionError(f"target column index {target} out of range for {ncols} columns")
        target_idx %= ncols
    else:
        if header is None or target not in header:
            raise IngestionError(
                f"target column {target!r} not found; header is {header}")
        target_idx = header.index(target)

    rows, bad_lines = [], []
    for lineno, line in lines:
        toks = tokens(line)
        if len(toks) != ncols:
            bad_lines.append(lineno)
            continue
        vals = [numeric(t) for t in toks]
        if any(v is None for v in vals):
            bad_lines.append(lineno)
            continue
        rows.append(vals)
    if bad_lines:
        shown = ", ".join(map(str, bad_lines[:5]))
        warnings.warn(f"{path}: dropped {len(bad_lines)} unusable row(s) (lines {shown}"
                      + ("..." if len(bad_lines) > 5 else "") + ")")
    if not rows:
        raise IngestionError(
            f"{path}: no usable rows (first bad lines: {bad_lines[:5]})")

    data = np.asarray(rows, dtype=float)
    feat_idx = [j for j in range(ncols) if j != target_idx]
    return Dataset(
        name=name or path.stem,
        x=data[:, feat_idx],
        y=data[:, target_idx],
        provenance={"path": str(path), "target_column": target_idx,
                    "dropped_rows": len(bad_lines)},
    )


def write_dataset(ds: Dataset, path) -> None:
    """Write a dataset as CSV with a header; floats use repr so a reload is exact."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(ds.dim)] + ["target"])
        for xi, yi in zip(ds.x, ds.y):
            writer.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


@dataclass
class Standardization:
    """Per-column statistics from a training split, applied to both splits."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    kept_columns: list[int]

    def apply_x(self, x):
        return (np.asarray(x, dtype=float)[:, self.kept_columns] - self.x_mean) / self.x_std

    def apply_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def destandardize_y(self, y_std_units):
        return np.asarray(y_std_units, dtype=float) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {"x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std,
                "kept_columns": list(self.kept_columns)}

    @classmethod
    def from_dict(cls, d) -> "Standardization":
        return cls(np.asarray(d["x_mean"], float), np.asarray(d["x_std"], float),
                   float(d["y_mean"]), float(d["y_std"]), list(d["kept_columns"]))


def split_and_standardize(ds: Dataset, seed: int, train_frac: float):
    """Seeded shuffle-split, then standardize both sides with train statistics.

    Returns (train, test, stats). Feature columns with zero variance on the
    training split are dropped with a warning. Metrics downstream are in
    standardized target units.
    """
    if not 0.0 < train_frac < 1.0:
        raise ContractViolation(f"train_frac must be in (0, 1), got {train_frac}")
    perm = np.random.default_rng(seed).permutation(ds.n)
    n_train = int(ds.n * train_frac)
    if not 1 <= n_train < ds.n:
        raise ContractViolation(
            f"train_frac {train_frac} leaves an empty split for n={ds.n}")
    tr, te = perm[:n_train], perm[n_train:]

    x_mean = ds.x[tr].mean(axis=0)
    x_std = ds.x[tr].std(axis=0)
    kept = [j for j in range(ds.dim) if x_std[j] > 0]
    if len(kept) < ds.dim:
        dropped = sorted(set(range(ds.dim)) - set(kept))
        warnings.warn(f"{ds.name}: dropping zero-variance feature column(s) {dropped}")
    if not kept:
        raise ContractViolation(f"{ds.name}: all feature columns have zero variance")
    y_mean = float(ds.y[tr].mean())
    y_std = float(ds.y[tr].std())
    if y_std == 0:
        raise ContractViolation(f"{ds.name}: training targets have zero variance")

    stats = Standardization(x_mean[kept], x_std[kept], y_mean, y_std, kept)
    train = Dataset(f"{ds.name}", stats.apply_x(ds.x[tr]), stats.apply_y(ds.y[tr]),
                    {**ds.provenance, "split": "train"})
    test = Dataset(f"{ds.name}", stats.apply_x(ds.x[te]), stats.apply_y(ds.y[te]),
                   {**ds.provenance, "split": "test"})
    return train, test, stats


@dataclass(frozen=True)
class SweepConfig:
    """Grid and protocol settings for one benchmark sweep."""

    eps_train_grid: tuple = (1e-3, 1e-2, 1e-1, 1.0)
    eps_test_grid: tuple | None = None  # None: test tolerance = train tolerance
    precond_ranks: tuple = (15, 50, 100)
    lanczos_ranks: tuple = (15, 100, 500, 1000, 2500, 5000, 10000)
    optimizers: tuple = ("adam",)
    precisions: tuple = ("f64",)
    splits: int = 5
    seed: int = 0
    train_frac: float = 0.8
    subsample: int = 4000
    max_epochs: int = 2000
    learning_rate: float = 0.05
    lbfgs_memory: int = 10
    max_cg_iters: int = 500
    num_probes: int = 10
    include_cholesky_baseline: bool = True

    def __post_init__(self):
        if any(e <= 0 for e in self.eps_train_grid):
            raise ContractViolation("CG tolerances must be positive")
        if self.eps_test_grid is not None and any(e <= 0 for e in self.eps_test_grid):
            raise ContractViolation("test CG tolerances must be positive")
        if any(w < 0 for w in self.precond_ranks) or any(k < 1 for k in self.lanczos_ranks):
            raise ContractViolation("grid ranks must be nonnegative (w) / positive (k)")
        if self.splits < 1:
            raise ContractViolation("need at least one split")
        for opt in self.optimizers:
            if opt not in ("adam", "lbfgs"):
                raise ContractViolation(f"unknown optimizer {opt!r}")


def preset_config(name: str, **overrides) -> SweepConfig:
    """SweepConfig pinned to a named preset's (eps_train, eps_test, k, w)."""
    if name not in PRESETS:
        raise ContractViolation(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    base = SweepConfig(
        eps_train_grid=(p["eps_train"],),
        eps_test_grid=(p["eps_test"],),
        precond_ranks=(p["w"],),
        lanczos_ranks=(p["k"],),
    )
    return replace(base, **overrides) if overrides else base


@dataclass
class SweepResult:
    """One sweep cell: identifying key fields plus measured quantities."""

    dataset: str
    split: int
    backend: str
    eps_train: float | None
    eps_test: float | None
    w: int | None
    k: int | None
    optimizer: str
    precision: str
    train_mll: float | None = None
    rmse: float | None = None
    nll: float | None = None
    cg_iters_mean: float | None = None
    clamped_count: int | None = None
    grad_evals: int | None = None
    wall_time_s: float | None = None
    loss_trajectory: list = field(default_factory=list)
    stop_reason: str = ""
    error: str | None = None

    def key(self) -> str:
        parts = [self.dataset, self.split, self.backend, self.eps_train,
                 self.eps_test, self.w, self.k, self.optimizer, self.precision]
        return "|".join("" if p is None else str(p) for p in parts)

    def to_record(self) -> dict:
        return {
            "key": self.key(),
            **{c: getattr(self, c) for c in RECORD_COLUMNS},
            "loss_trajectory": self.loss_trajectory,
            "stop_reason": self.stop_reason,
            "error": self.error,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SweepResult":
        kwargs = {c: rec.get(c) for c in RECORD_COLUMNS}
        return cls(**kwargs, loss_trajectory=rec.get("loss_trajectory", []),
                   stop_reason=rec.get("stop_reason", ""), error=rec.get("error"))


def cell_seed(root_seed: int, key: str) -> int:
    """Stable per-cell RNG seed derived from the root seed and cell key."""
    digest = hashlib.sha256(f"{root_seed}|{key}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def default_init(dim: int) -> HyperParams:
    """Harness default: unit lengthscales/outputscale, noise 0.1, zero mean."""
    return HyperParams.from_constrained(np.ones(dim), 1.0, 0.1, 0.0)


def _iter_cells(cfg: SweepConfig, dataset_name: str):
    for split in range(cfg.splits):
        if cfg.include_cholesky_baseline:
            yield SweepResult(dataset_name, split, "cholesky", None, None, None,
                              None, cfg.optimizers[0], "f64")
        for eps_train in cfg.eps_train_grid:
            eps_tests = cfg.eps_test_grid if cfg.eps_test_grid is not None else (eps_train,)
            for eps_test in eps_tests:
                for w in cfg.precond_ranks:
                    for k in cfg.lanczos_ranks:
                        for opt in cfg.optimizers:
                            for prec in cfg.precisions:
                                yield SweepResult(dataset_name, split, "iterative",
                                                  eps_train, eps_test, w, k, opt, prec)


def _run_cell(cell: SweepResult, train: Dataset, test: Dataset, cfg: SweepConfig) -> SweepResult:
    started = time.perf_counter()
    seed = cell_seed(cfg.seed, cell.key())
    if cell.backend == "cholesky":
        backend = CholeskyBackend()
    else:
        backend = IterativeBackend(
            cg_tol=cell.eps_train, precond_rank=min(cell.w, train.n),
            max_cg_iters=cfg.max_cg_iters, num_probes=cfg.num_probes, seed=seed)
    objective = MllObjective(train.x, train.y, backend, cell.precision)
    opt_cfg = OptimizerConfig(method=cell.optimizer, learning_rate=cfg.learning_rate,
                              max_epochs=cfg.max_epochs, lbfgs_memory=cfg.lbfgs_memory)
    theta, trace = fit(objective, default_init(train.dim).to_vector(), opt_cfg)
    model = objective.model_for(theta)
    k = train.n if cell.backend == "cholesky" else cell.k
    cache = build_caches(model, k, cg_tol=cell.eps_test)
    pred = predict(cache, model, test.x, include_noise=True)

    cg_counts = list(objective.cg_iterations)
    if cache.backend_name == "iterative":
        cg_counts.append(cache.cg_iterations)
    cell.train_mll = -trace.best_loss
    cell.rmse = rmse_metric(pred, test.y)
    cell.nll = nll_metric(pred, test.y)
    cell.cg_iters_mean = float(np.mean(cg_counts)) if cg_counts else None
    cell.clamped_count = pred.clamped_count
    cell.grad_evals = trace.grad_evaluations
    cell.loss_trajectory = [float(v) for v in trace.losses]
    cell.stop_reason = trace.stop_reason
    cell.wall_time_s = time.perf_counter() - started
    return cell


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    records = []
    for line in path.read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def _append_jsonl(path: Path, record: dict) -> None:
    with path.open("a") as fh:
        fh.write(json.dumps(record) + "\n")


def subsample_dataset(ds: Dataset, cap: int, seed: int) -> Dataset:
    """Deterministically subsample a dataset down to at most `cap` rows."""
    if ds.n <= cap:
        return ds
    idx = np.random.default_rng(cell_seed(seed, f"subsample|{ds.name}")).permutation(ds.n)[:cap]
    return Dataset(ds.name, ds.x[idx], ds.y[idx],
                   {**ds.provenance, "subsampled_to": cap})


def run_sweep(cfg: SweepConfig, datasets, out_dir) -> list[SweepResult]:
    """Run every grid cell x split on every dataset, resuming by key.

    Records append to results.jsonl as cells finish; infeasible cells (k
    larger than the training split) go to skips.jsonl with a reason; cell
    failures are recorded without aborting the sweep and are not retried on
    resume (delete their lines to retry). Finally writes the deterministic
    summary table.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.jsonl"
    skips_path = out_dir / "skips.jsonl"

    existing = {rec["key"]: rec for rec in _read_jsonl(results_path)}
    skipped = {rec["key"] for rec in _read_jsonl(skips_path)}
    results = [SweepResult.from_record(rec) for rec in existing.values()]

    for ds in datasets:
        if ds.n < MIN_SWEEP_POINTS:
            raise ContractViolation(
                f"dataset {ds.name} has n={ds.n} < {MIN_SWEEP_POINTS} points")
        ds = subsample_dataset(ds, cfg.subsample, cfg.seed)
        split_cache: dict[int, tuple] = {}
        for cell in _iter_cells(cfg, ds.name):
            key = cell.key()
            if key in existing or key in skipped:
                continue
            if cell.split not in split_cache:
                split_cache[cell.split] = split_and_standardize(
                    ds, cell_seed(cfg.seed, f"split|{ds.name}|{cell.split}"), cfg.train_frac)
            train, test, _ = split_cache[cell.split]
            if cell.k is not None and cell.k > train.n:
                _append_jsonl(skips_path, {"key": key, "reason": f"k>n ({cell.k}>{train.n})"})
                skipped.add(key)
                continue
            try:
                cell = _run_cell(cell, train, test, cfg)
            except Exception as exc:  # record the failure, keep sweeping
                cell.error = f"{type(exc).__name__}: {exc}"
                cell.wall_time_s = None
            record = cell.to_record()
            _append_jsonl(results_path, record)
            existing[key] = record
            results.append(cell)

    write_summary(results, out_dir / "summary.csv")
    return results


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_summary(results: list[SweepResult], path) -> Path:
    """Deterministic flat table: one row per successful cell, sorted by key.

    Wall times are intentionally not part of this table (they are not a
    function of the sweep inputs); see results.jsonl for timings.
    """
    rows = sorted((r for r in results if r.error is None), key=lambda r: r.key())
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for r in rows:
            writer.writerow([_format(getattr(r, c)) for c in SUMMARY_COLUMNS])
    return path


def _group_mean(results, key_fields, value_field):
    groups: dict[tuple, list[float]] = {}
    for r in results:
        if r.error is not None or getattr(r, value_field) is None:
            continue
        key = tuple(getattr(r, f) for f in key_fields)
        groups.setdefault(key, []).append(getattr(r, value_field))
    return {k: float(np.mean(v)) for k, v in sorted(groups.items(), key=lambda kv: str(kv[0]))}


def emit_report(results: list[SweepResult], kind: str, out_dir) -> Path:
    """Write one tidy table for a figure pipeline; returns the file path.

    Every table carries the Cholesky baseline as reference rows (blank
    iterative-only columns) so downstream plotting needs no joins.
    """
    if kind not in REPORT_KINDS:
        raise ContractViolation(f"unknown report kind {kind!r}; choose from {REPORT_KINDS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{kind}.csv"
    iterative = [r for r in results if r.backend == "iterative"]
    baseline = [r for r in results if r.backend == "cholesky"]

    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if kind == "nll_vs_rank":
            writer.writerow(["dataset", "backend", "k", "eps_train", "eps_test", "w",
                             "optimizer", "precision", "nll_mean"])
            fields = ["dataset", "k", "eps_train", "eps_test", "w", "optimizer", "precision"]
            for key, mean in _group_mean(iterative, fields, "nll").items():
                writer.writerow([_format(key[0]), "iterative"]
                                + [_format(v) for v in key[1:]] + [_format(mean)])
            for key, mean in _group_mean(baseline, ["dataset"], "nll").items():
                writer.writerow([_format(key[0]), "cholesky", "", "", "", "", "", "",
                                 _format(mean)])
        elif kind == "rmse_vs_tolerance":
            writer.writerow(["dataset", "backend", "eps_test", "eps_train", "w",
                             "optimizer", "precision", "rmse_mean"])
            fields = ["dataset", "eps_test", "eps_train", "w", "optimizer", "precision"]
            for key, mean in _group_mean(iterative, fields, "rmse").items():
                writer.writerow([_format(key[0]), "iterative"]
                                + [_format(v) for v in key[1:]] + [_format(mean)])
            for key, mean in _group_mean(baseline, ["dataset"], "rmse").items():
                writer.writerow([_format(key[0]), "cholesky", "", "", "", "", "", _format(mean)])
        elif kind == "loss_trajectories":
            writer.writerow(["dataset", "split", "backend", "optimizer", "eps_train",
                             "w", "precision", "step", "loss"])
            for r in sorted(results, key=lambda r: r.key()):
                if r.error is not None:
                    continue
                for step, loss in enumerate(r.loss_trajectory):
                    writer.writerow([r.dataset, r.split, r.backend, r.optimizer,
                                     _format(r.eps_train), _format(r.w), r.precision,
                                     step, _format(float(loss))])
        else:  # optimizer_comparison
            writer.writerow(["dataset", "backend", "optimizer", "train_mll_mean",
                             "rmse_mean", "nll_mean", "grad_evals_mean",
                             "wall_time_s_mean"])
            pool = iterative + baseline
            fields = ["dataset", "backend", "optimizer"]
            mll = _group_mean(pool, fields, "train_mll")
            rmse = _group_mean(pool, fields, "rmse")
            nll = _group_mean(pool, fields, "nll")
            evals = _group_mean(pool, fields, "grad_evals")
            walls = _group_mean(pool, fields, "wall_time_s")
            for key in mll:
                writer.writerow(list(map(_format, key))
                                + [_format(mll.get(key)), _format(rmse.get(key)),
                                   _format(nll.get(key)), _format(evals.get(key)),
                                   _format(walls.get(key))])
    return path


def load_results(path) -> list[SweepResult]:
    """Read sweep results back from a results.jsonl file."""
    return [SweepResult.from_record(rec) for rec in _read_jsonl(Path(path))]
