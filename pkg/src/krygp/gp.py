"""Exact and iterative Gaussian-process regression.

The exact backend factorizes the shifted kernel matrix densely (Cholesky);
the iterative backend runs preconditioned CG for every solve, stochastic
Lanczos quadrature for log-determinants, and a Hutchinson estimator for
gradient traces. Test-time predictions go through cached quantities: the
mean cache m = K_hat^{-1} (y - mu) and a covariance root R with
R R^T ~ K_hat^{-1}, so each test point costs O(k n) after caching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ContractViolation, DimensionMismatch, NotPositiveDefinite, NumericalBreakdown
from .kernels import (
    JITTER,
    HyperParams,
    ShiftedKernelOperator,
    dense_kernel_grads,
    kernel_hyper_grad,
    matern52,
    matern52_diag,
    softplus_grad,
)
from .solvers import (
    DEFAULT_MAX_CG_ITERS,
    Preconditioner,
    hutchinson_trace,
    kernel_preconditioner,
    lanczos,
    pcg_solve,
    rademacher_probes,
    slq_logdet,
)

_LOG_2PI = np.log(2.0 * np.pi)
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class CholeskyBackend:
    """Exact dense inference."""

    name = "cholesky"


@dataclass(frozen=True)
class IterativeBackend:
    """Preconditioned-CG inference settings.

    cg_tol is the training tolerance; test-time solves may override it.
    slq_rank is the Lanczos size used per probe for the training
    log-determinant estimate (only affects the reported MLL value, not its
    gradient).
    """

    cg_tol: float = 1e-3
    precond_rank: int = 50
    max_cg_iters: int = DEFAULT_MAX_CG_ITERS
    num_probes: int = 10
    slq_rank: int = 25
    seed: int = 0

    name = "iterative"

    def __post_init__(self):
        if self.cg_tol <= 0:
            raise ContractViolation(f"cg_tol must be positive, got {self.cg_tol}")
        if self.precond_rank < 0:
            raise ContractViolation(f"precond_rank must be >= 0, got {self.precond_rank}")
        if self.max_cg_iters < 1:
            raise ContractViolation(f"max_cg_iters must be >= 1, got {self.max_cg_iters}")
        if self.num_probes < 1:
            raise ContractViolation(f"num_probes must be >= 1, got {self.num_probes}")


Backend = CholeskyBackend | IterativeBackend


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """A GP regression model: hyperparameters, training data, and a backend."""

    params: HyperParams
    train_x: np.ndarray
    train_y: np.ndarray
    backend: Backend = field(default_factory=CholeskyBackend)
    precision: str = "f64"

    def __post_init__(self):
        x = np.asarray(self.train_x, dtype=float)
        y = np.asarray(self.train_y, dtype=float)
        if x.ndim != 2:
            raise DimensionMismatch("train_x must be 2-D (points x features)")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise DimensionMismatch(
                f"train_y shape {y.shape} does not match train_x rows {x.shape[0]}")
        if x.shape[0] < 1:
            raise ContractViolation("need at least one training point")
        if x.shape[1] != self.params.dim:
            raise DimensionMismatch(
                f"train_x has {x.shape[1]} features but params expect {self.params.dim}")
        object.__setattr__(self, "train_x", x)
        object.__setattr__(self, "train_y", y)

    @property
    def n(self) -> int:
        return self.train_x.shape[0]

    @property
    def residual(self) -> np.ndarray:
        """Centered targets y - mean_constant."""
        return self.train_y - self.params.mean_constant

    def operator(self) -> ShiftedKernelOperator:
        return ShiftedKernelOperator(self.train_x, self.params, precision=self.precision)

    def kernel_column(self, i: int) -> np.ndarray:
        """Column i of the noise-free kernel matrix (for pivoted Cholesky)."""
        return matern52(self.train_x[i:i + 1], self.train_x, self.params)[0]

    def preconditioner(self) -> Preconditioner:
        rank = self.backend.precond_rank if isinstance(self.backend, IterativeBackend) else 0
        return kernel_preconditioner(
            matern52_diag(self.train_x, self.params), self.kernel_column,
            min(rank, self.n), self.params.noise)


def _cholesky_factor(model: TrainedModel):
    """Dense Cholesky of K_hat with escalating jitter only on failure."""
    K = matern52(model.train_x, model.train_x, model.params)
    idx = np.diag_indices_from(K)
    K[idx] += model.params.noise
    base = JITTER.get(model.precision, JITTER["f64"])
    for jitter in (0.0, base, 10 * base, 100 * base):
        try:
            return scipy.linalg.cho_factor(K + jitter * np.eye(model.n) if jitter else K,
                                           lower=True), jitter
        except scipy.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(
        f"Cholesky failed for n={model.n} even with jitter {100 * base:.1e}")


@dataclass(frozen=True)
class MllDetail:
    """Marginal log-likelihood split into its three terms (unnormalized)."""

    quad_term: float
    logdet_term: float
    constant: float
    n: int

    @property
    def total(self) -> float:
        return self.quad_term + self.logdet_term + self.constant

    @property
    def value(self) -> float:
        """Per-point MLL, the quantity optimizers see."""
        return self.total / self.n


def mll_detail(model: TrainedModel) -> MllDetail:
    r = model.residual
    n = model.n
    const = -0.5 * n * _LOG_2PI
    if isinstance(model.backend, CholeskyBackend):
        factor, _ = _cholesky_factor(model)
        u = scipy.linalg.cho_solve(factor, r)
        quad = -0.5 * float(r @ u)
        logdet = -float(np.sum(np.log(np.diagonal(factor[0]))))
        return MllDetail(quad, logdet, const, n)
    be = model.backend
    op = model.operator()
    precond = model.preconditioner()
    report = pcg_solve(op, r[:, None], be.cg_tol, be.max_cg_iters, precond)
    quad = -0.5 * float(r @ report.solution)
    logdet = -0.5 * slq_logdet(op, be.num_probes, be.slq_rank, be.seed)
    return MllDetail(quad, float(logdet), const, n)


def mll(model: TrainedModel) -> float:
    """Marginal log-likelihood normalized by the number of training points."""
    return mll_detail(model).value


def _grad_index(params: HyperParams, spec) -> int:
    if spec.parameter == "lengthscale":
        return spec.index
    return {"outputscale": params.dim, "noise": params.dim + 1,
            "mean": params.dim + 2}[spec.parameter]


def mll_grad(model: TrainedModel) -> np.ndarray:
    """Gradient of :func:`mll` with respect to the raw parameter vector."""
    _, grad = mll_and_grad(model)
    return grad


def mll_and_grad(model: TrainedModel, cg_stats: list | None = None):
    """(mll value, gradient over raw parameters), sharing solves between both.

    The gradient of the normalized MLL for a kernel parameter is
    (1/n) * [ 1/2 u^T (dK/dtheta) u - 1/2 tr(K_hat^{-1} dK/dtheta) ] with
    u = K_hat^{-1} (y - mu); the mean-constant gradient is (1/n) 1^T u.
    The exact backend computes the trace densely; the iterative backend uses
    a Hutchinson estimate whose probe solves are batched with the mean solve.
    """
    params = model.params
    n = model.n
    r = model.residual
    grad = np.zeros(params.num_params)
    noise_slope = softplus_grad(params.raw_noise)

    if isinstance(model.backend, CholeskyBackend):
        factor, _ = _cholesky_factor(model)
        u = scipy.linalg.cho_solve(factor, r)
        K_inv = scipy.linalg.cho_solve(factor, np.eye(n))
        for spec, G in dense_kernel_grads(model.train_x, params):
            quad = 0.5 * float(u @ (G @ u))
            tr = -0.5 * float(np.sum(K_inv * G))
            grad[_grad_index(params, spec)] = (quad + tr) / n
        grad[params.dim + 1] = noise_slope * (
            0.5 * float(u @ u) - 0.5 * float(np.trace(K_inv))) / n
        grad[params.dim + 2] = float(np.sum(u)) / n
        quad_term = -0.5 * float(r @ u)
        logdet = -float(np.sum(np.log(np.diagonal(factor[0]))))
        value = (quad_term + logdet - 0.5 * n * _LOG_2PI) / n
        return value, grad

    be = model.backend
    op = model.operator()
    precond = model.preconditioner()
    probes = rademacher_probes(n, be.num_probes, be.seed)
    rhs = np.column_stack([r, probes])
    report = pcg_solve(op, rhs, be.cg_tol, be.max_cg_iters, precond)
    if cg_stats is not None:
        cg_stats.extend(report.iterations.tolist())
    u = report.solutions[:, 0].astype(float)
    inv_probes = report.solutions[:, 1:].astype(float)

    def share_solves(block):
        return inv_probes

    for spec in params.grad_specs():
        if spec.parameter in ("noise", "mean"):
            continue
        G = kernel_hyper_grad(model.train_x, params, spec, precision=model.precision)
        quad = 0.5 * float(u @ G.matvec(u))
        tr = -0.5 * hutchinson_trace(share_solves, G, probes)
        grad[_grad_index(params, spec)] = (quad + tr) / n
    trace_noise = float(np.mean(np.einsum("ij,ij->j", inv_probes, probes)))
    grad[params.dim + 1] = noise_slope * (0.5 * float(u @ u) - 0.5 * trace_noise) / n
    grad[params.dim + 2] = float(np.sum(u)) / n

    quad_term = -0.5 * float(r @ u)
    logdet = -0.5 * slq_logdet(op, be.num_probes, be.slq_rank, be.seed)
    value = (quad_term + logdet - 0.5 * n * _LOG_2PI) / n
    return value, grad


@dataclass
class PredictiveCache:
    """Precomputed solve and covariance root for constant-time prediction."""

    mean_cache: np.ndarray
    cov_root: np.ndarray
    rank: int
    rank_requested: int
    backend_name: str
    cg_tol: float | None
    cg_iterations: int
    broke_down: bool


def build_caches(model: TrainedModel, k: int, cg_tol: float | None = None) -> PredictiveCache:
    """Mean cache and rank-k covariance root for the model.

    The exact backend returns the full-rank root R = L^{-T} of the Cholesky
    factorization; the iterative backend solves the mean system with CG at
    `cg_tol` (defaulting to the backend tolerance) and builds
    R = Q T^{-1/2} from a Lanczos run started at the scaled training
    residual. Lanczos breakdown below k yields a cache at the achieved rank,
    flagged via `broke_down`.
    """
    n = model.n
    if not 1 <= k <= n:
        raise ContractViolation(f"cache rank k={k} must satisfy 1 <= k <= n={n}")
    r = model.residual
    if isinstance(model.backend, CholeskyBackend):
        factor, _ = _cholesky_factor(model)
        m = scipy.linalg.cho_solve(factor, r)
        L = np.tril(factor[0])
        root = scipy.linalg.solve_triangular(L, np.eye(n), lower=True).T
        return PredictiveCache(m, root, n, n, "cholesky", None, 0, False)

    be = model.backend
    op = model.operator()
    precond = model.preconditioner()
    tol = be.cg_tol if cg_tol is None else cg_tol
    report = pcg_solve(op, r[:, None], tol, be.max_cg_iters, precond)
    if np.linalg.norm(r) == 0:
        start = np.ones(n)  # degenerate all-explained target; any start works
    else:
        start = r
    factors = lanczos(op, start, k)
    theta, vecs = factors.eigendecompose()
    if theta.min() <= 0:
        raise NumericalBreakdown(
            f"nonpositive Ritz value {theta.min():.3e} while building covariance root")
    root = (factors.q_mat.astype(float) @ vecs) / np.sqrt(theta)
    return PredictiveCache(
        report.solution.astype(float), root, factors.rank, k, "iterative",
        tol, int(report.iterations[0]), factors.broke_down)


@dataclass
class Prediction:
    """Posterior mean and per-point variance at test inputs."""

    mean: np.ndarray
    variance: np.ndarray
    includes_noise: bool
    clamped_count: int


def predict(cache: PredictiveCache, model: TrainedModel, test_x: np.ndarray,
            include_noise: bool = True) -> Prediction:
    """Cached prediction: mu = mean + K_*X m, var = k(x,x) - ||R^T K_X*||^2.

    Latent variances that come out negative (the covariance root can
    over-approximate K_hat^{-1} in some directions) are clamped to a small
    floor and counted.
    """
    test_x = np.asarray(test_x, dtype=float)
    if test_x.ndim != 2 or test_x.shape[1] != model.params.dim:
        raise DimensionMismatch(
            f"test inputs must be (m x {model.params.dim}), got {test_x.shape}")
    cross = matern52(test_x, model.train_x, model.params)
    mean = model.params.mean_constant + cross @ cache.mean_cache
    proj = cross @ cache.cov_root
    latent = matern52_diag(test_x, model.params) - np.einsum("ij,ij->i", proj, proj)
    clamped = int(np.sum(latent < 0))
    latent = np.maximum(latent, VARIANCE_FLOOR)
    variance = latent + model.params.noise if include_noise else latent
    return Prediction(mean, variance, include_noise, clamped)


def nll_metric(pred: Prediction, targets: np.ndarray) -> float:
    """Mean Gaussian negative log-likelihood of targets under the prediction.

    Includes the 1/2 log(2 pi) constant so values are comparable with common
    baselines; the constant does not affect minimizer or monotonicity
    analyses.
    """
    targets = np.asarray(targets, dtype=float)
    if targets.shape != pred.mean.shape:
        raise DimensionMismatch(
            f"targets shape {targets.shape} != predictions {pred.mean.shape}")
    if np.any(pred.variance <= 0):
        raise ContractViolation("nll_metric requires strictly positive variances")
    sq = (pred.mean - targets) ** 2
    return float(np.mean(0.5 * np.log(pred.variance) + sq / (2.0 * pred.variance)
                         + 0.5 * _LOG_2PI))


def rmse_metric(pred: Prediction, targets: np.ndarray) -> float:
    targets = np.asarray(targets, dtype=float)
    if targets.shape != pred.mean.shape:
        raise DimensionMismatch(
            f"targets shape {targets.shape} != predictions {pred.mean.shape}")
    return float(np.sqrt(np.mean((pred.mean - targets) ** 2)))


def variance_vs_rank(K_hat: np.ndarray, cross: np.ndarray, self_var: float,
                     k_max: int) -> np.ndarray:
    """Posterior variance sequence under rank-k eigen-truncations of K_hat.

    Eigenvalues are taken in descending order; entry k-1 of the result is
    self_var - v^T Q_{:k} Lambda_{:k}^{-1} Q_{:k}^T v. Successive differences
    equal (v^T q_{k+1})^2 / lambda_{k+1} >= 0, so the sequence never
    increases.
    """
    K_hat = np.asarray(K_hat, dtype=float)
    if K_hat.ndim != 2 or K_hat.shape[0] != K_hat.shape[1]:
        raise ContractViolation(f"K_hat must be square, got {K_hat.shape}")
    if not np.allclose(K_hat, K_hat.T, rtol=1e-10, atol=1e-12):
        raise ContractViolation("K_hat must be symmetric")
    cross = np.asarray(cross, dtype=float)
    n = K_hat.shape[0]
    if cross.shape != (n,):
        raise DimensionMismatch(f"cross-covariance must have shape ({n},)")
    if not 1 <= k_max <= n:
        raise ContractViolation(f"k_max={k_max} must satisfy 1 <= k_max <= n={n}")
    evals, evecs = np.linalg.eigh(K_hat)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    coeff = evecs.T @ cross
    reductions = np.cumsum(coeff ** 2 / evals)
    return self_var - reductions[:k_max]


# --- optimizer-facing objective -------------------------------------------


class MllObjective:
    """Callable raw-vector -> (loss, grad) with loss = -MLL/n.

    Accumulates CG iteration counts (iterative backend) and counts
    evaluations, for benchmark reporting.
    """

    def __init__(self, train_x: np.ndarray, train_y: np.ndarray,
                 backend: Backend, precision: str = "f64"):
        self.train_x = np.asarray(train_x, dtype=float)
        self.train_y = np.asarray(train_y, dtype=float)
        self.backend = backend
        self.precision = precision
        self.cg_iterations: list[int] = []
        self.evaluations = 0

    def model_for(self, raw_vector: np.ndarray) -> TrainedModel:
        return TrainedModel(HyperParams.from_vector(raw_vector), self.train_x,
                            self.train_y, self.backend, self.precision)

    def __call__(self, raw_vector: np.ndarray):
        self.evaluations += 1
        value, grad = mll_and_grad(self.model_for(raw_vector), cg_stats=self.cg_iterations)
        return -value, -grad


# --- checkpointing ----------------------------------------------------------

_CHECKPOINT_FORMAT = "krygp-model"
_CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """Self-describing model record: hyperparameters, backend, and context."""

    params: HyperParams
    backend: Backend
    precision: str
    standardization: dict | None
    seed: int | None

    def to_model(self, train_x: np.ndarray, train_y: np.ndarray) -> TrainedModel:
        return TrainedModel(self.params, train_x, train_y, self.backend, self.precision)


def _backend_to_dict(backend: Backend) -> dict:
    if isinstance(backend, CholeskyBackend):
        return {"name": "cholesky"}
    return {
        "name": "iterative",
        "cg_tol": backend.cg_tol,
        "precond_rank": backend.precond_rank,
        "max_cg_iters": backend.max_cg_iters,
        "num_probes": backend.num_probes,
        "slq_rank": backend.slq_rank,
        "seed": backend.seed,
    }


def _backend_from_dict(data: dict) -> Backend:
    if data["name"] == "cholesky":
        return CholeskyBackend()
    if data["name"] == "iterative":
        return IterativeBackend(
            cg_tol=data["cg_tol"], precond_rank=data["precond_rank"],
            max_cg_iters=data["max_cg_iters"], num_probes=data["num_probes"],
            slq_rank=data.get("slq_rank", 25), seed=data.get("seed", 0))
    raise ContractViolation(f"unknown backend name {data.get('name')!r} in checkpoint")


def save_checkpoint(model: TrainedModel, path, standardization: dict | None = None,
                    seed: int | None = None) -> None:
    """Write a versioned JSON checkpoint; floats round-trip exactly via repr."""
    record = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "params": {
            "raw_lengthscales": model.params.raw_lengthscales.tolist(),
            "raw_outputscale": model.params.raw_outputscale,
            "raw_noise": model.params.raw_noise,
            "mean_constant": model.params.mean_constant,
        },
        "backend": _backend_to_dict(model.backend),
        "precision": model.precision,
        "standardization": standardization,
        "seed": seed,
    }
    Path(path).write_text(json.dumps(record, indent=2) + "\n")


def load_checkpoint(path) -> Checkpoint:
    data = json.loads(Path(path).read_text())
    if data.get("format") != _CHECKPOINT_FORMAT:
        raise ContractViolation(f"not a model checkpoint: {path}")
    if data.get("version") != _CHECKPOINT_VERSION:
        raise ContractViolation(f"unsupported checkpoint version {data.get('version')}")
    p = data["params"]
    params = HyperParams(np.asarray(p["raw_lengthscales"], dtype=float),
                         p["raw_outputscale"], p["raw_noise"], p["mean_constant"])
    return Checkpoint(params, _backend_from_dict(data["backend"]), data["precision"],
                      data.get("standardization"), data.get("seed"))
