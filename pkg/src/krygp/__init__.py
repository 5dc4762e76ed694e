"""Gaussian-process regression with exact and iterative inference backends.

The public surface re-exports the pieces most workflows touch: kernels and
hyperparameters, linear operators, the iterative solver toolbox, the GP
inference engine, optimizers, and the benchmark harness.
"""

from .errors import (
    CapacityError,
    ContractViolation,
    DimensionMismatch,
    IngestionError,
    KrygpError,
    NotPositiveDefinite,
    NumericalBreakdown,
    NumericalDivergence,
)
from .kernels import (
    HyperParams,
    KernelGradSpec,
    ShiftedKernelOperator,
    kernel_hyper_grad,
    matern52,
    matern52_diag,
    softplus,
    softplus_grad,
    softplus_inverse,
)
from .linop import DenseOperator, DiagonalOperator, LinearOperator, identity
from .solvers import (
    LanczosFactors,
    Preconditioner,
    SolveReport,
    hutchinson_trace,
    kernel_preconditioner,
    lanczos,
    pcg_solve,
    pivoted_cholesky,
    rademacher_probes,
    slq_logdet,
)
from .gp import (
    Checkpoint,
    CholeskyBackend,
    IterativeBackend,
    MllObjective,
    Prediction,
    PredictiveCache,
    TrainedModel,
    build_caches,
    load_checkpoint,
    mll,
    mll_and_grad,
    mll_detail,
    mll_grad,
    nll_metric,
    predict,
    rmse_metric,
    save_checkpoint,
    variance_vs_rank,
)
from .optim import (
    FitTrace,
    OptimizerConfig,
    ema_converged,
    fit,
    fit_two_phase,
    two_loop_direction,
)
from .bench import (
    Dataset,
    Standardization,
    SweepConfig,
    SweepResult,
    emit_report,
    load_dataset,
    load_results,
    preset_config,
    run_sweep,
    split_and_standardize,
    write_dataset,
    write_summary,
)

__version__ = "0.1.0"
