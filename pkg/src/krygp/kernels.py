"""Matern-5/2 ARD kernel, hyperparameter transforms, and kernel derivatives.

All positive hyperparameters (lengthscales, outputscale, noise) live in an
unconstrained "raw" space and are mapped through a softplus; gradients are
reported with respect to the raw coordinates so optimizers never see the
positivity constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from .errors import ContractViolation, DimensionMismatch
from .linop import BlockRowOperator, DiagonalOperator, LinearOperator

_SQRT5 = np.sqrt(5.0)

# Diagonal jitter used only when a dense Cholesky fails; iterative solvers
# rely on the noise term alone.
JITTER = {"f64": 1e-6, "f32": 1e-4}


def softplus(x):
    """Numerically stable log(1 + exp(x))."""
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """Inverse of :func:`softplus`; requires y > 0."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ContractViolation("softplus_inverse requires positive inputs")
    small = np.log(np.expm1(np.minimum(y, 20.0)))
    large = y + np.log1p(-np.exp(-np.maximum(y, 20.0)))
    out = np.where(y < 20.0, small, large)
    return out if out.ndim else float(out)


def softplus_grad(x):
    """d softplus / dx, the logistic sigmoid."""
    return expit(x)


@dataclass(frozen=True, eq=False)
class HyperParams:
    """Raw (unconstrained) kernel, noise and mean parameters.

    Constrained values are softplus transforms of the raw fields; the mean
    constant is unconstrained and passed through unchanged.
    """

    raw_lengthscales: np.ndarray
    raw_outputscale: float
    raw_noise: float
    mean_constant: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.raw_lengthscales, dtype=float))
        object.__setattr__(self, "raw_lengthscales", ls)
        object.__setattr__(self, "raw_outputscale", float(self.raw_outputscale))
        object.__setattr__(self, "raw_noise", float(self.raw_noise))
        object.__setattr__(self, "mean_constant", float(self.mean_constant))

    @property
    def dim(self) -> int:
        return self.raw_lengthscales.shape[0]

    @property
    def lengthscales(self) -> np.ndarray:
        return softplus(self.raw_lengthscales)

    @property
    def outputscale(self) -> float:
        return float(softplus(self.raw_outputscale))

    @property
    def noise(self) -> float:
        return float(softplus(self.raw_noise))

    @classmethod
    def from_constrained(cls, lengthscales, outputscale, noise, mean_constant=0.0):
        """Build raw parameters from constrained (positive) values."""
        return cls(
            raw_lengthscales=softplus_inverse(np.atleast_1d(lengthscales)),
            raw_outputscale=softplus_inverse(outputscale),
            raw_noise=softplus_inverse(noise),
            mean_constant=mean_constant,
        )

    # flat raw-vector view, ordered [lengthscales..., outputscale, noise, mean]

    @property
    def num_params(self) -> int:
        return self.dim + 3

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.raw_lengthscales,
            [self.raw_outputscale, self.raw_noise, self.mean_constant],
        ])

    @classmethod
    def from_vector(cls, vec) -> "HyperParams":
        vec = np.asarray(vec, dtype=float)
        if vec.ndim != 1 or vec.shape[0] < 4:
            raise ContractViolation(f"parameter vector must be 1-D with >= 4 entries, got {vec.shape}")
        d = vec.shape[0] - 3
        return cls(vec[:d], vec[d], vec[d + 1], vec[d + 2])

    def param_names(self) -> list[str]:
        return [f"lengthscale_{j}" for j in range(self.dim)] + ["outputscale", "noise", "mean"]

    def grad_specs(self) -> list["KernelGradSpec"]:
        """Specs for every raw parameter, in :meth:`to_vector` order."""
        specs = [KernelGradSpec("lengthscale", j) for j in range(self.dim)]
        specs += [KernelGradSpec("outputscale"), KernelGradSpec("noise"), KernelGradSpec("mean")]
        return specs


@dataclass(frozen=True)
class KernelGradSpec:
    """Identifies one raw parameter for kernel differentiation."""

    parameter: str
    index: int | None = None

    def validate(self, params: HyperParams) -> None:
        if self.parameter == "lengthscale":
            if self.index is None or not 0 <= self.index < params.dim:
                raise ContractViolation(
                    f"lengthscale index {self.index} out of range for dim {params.dim}")
        elif self.parameter not in ("outputscale", "noise", "mean"):
            raise ContractViolation(f"unknown parameter identifier {self.parameter!r}")


def _check_inputs(X, Z, params):
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.ndim != 2 or Z.ndim != 2:
        raise DimensionMismatch("kernel inputs must be 2-D (points x features)")
    d = params.dim
    if X.shape[1] != d or Z.shape[1] != d:
        raise DimensionMismatch(
            f"input feature dims {X.shape[1]}/{Z.shape[1]} do not match lengthscale dim {d}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
        raise ContractViolation("kernel inputs contain non-finite entries")
    return X, Z


def _scaled(X, params):
    return X / params.lengthscales


def matern52(X, Z, params: HyperParams) -> np.ndarray:
    """Matern-5/2 ARD kernel matrix between row sets X (m x d) and Z (m' x d).

    K[i, j] = s^2 (1 + sqrt(5) r + 5 r^2 / 3) exp(-sqrt(5) r) with r the
    Euclidean distance after dividing each feature by its lengthscale.
    """
    X, Z = _check_inputs(X, Z, params)
    sq = cdist(_scaled(X, params), _scaled(Z, params), "sqeuclidean")
    r = np.sqrt(sq)
    return params.outputscale * (1.0 + _SQRT5 * r + (5.0 / 3.0) * sq) * np.exp(-_SQRT5 * r)


def matern52_diag(X, params: HyperParams) -> np.ndarray:
    """Diagonal of matern52(X, X, params): constant s^2."""
    X = np.asarray(X, dtype=float)
    return np.full(X.shape[0], params.outputscale)


def _grad_block(X_rows, Z, params: HyperParams, spec: KernelGradSpec) -> np.ndarray:
    """One row block of d K / d raw_param (kernel part only, no noise)."""
    sq = cdist(_scaled(X_rows, params), _scaled(Z, params), "sqeuclidean")
    r = np.sqrt(sq)
    e = np.exp(-_SQRT5 * r)
    if spec.parameter == "outputscale":
        # dK/d raw = sigmoid(raw) * K / s^2
        return softplus_grad(params.raw_outputscale) * (1.0 + _SQRT5 * r + (5.0 / 3.0) * sq) * e
    if spec.parameter == "lengthscale":
        j = spec.index
        ell = params.lengthscales[j]
        diff_sq = (X_rows[:, j, None] / ell - Z[None, :, j] / ell) ** 2
        dk_dell = (5.0 / 3.0) * params.outputscale * (1.0 + _SQRT5 * r) * e * diff_sq / ell
        return softplus_grad(params.raw_lengthscales[j]) * dk_dell
    raise ContractViolation(f"no kernel block for parameter {spec.parameter!r}")


class KernelGradOperator(BlockRowOperator):
    """Lazy operator for d K_hat / d raw_theta of the outputscale or a lengthscale."""

    def __init__(self, X, params: HyperParams, spec: KernelGradSpec, precision="f64", **kw):
        X = np.asarray(X, dtype=float)
        super().__init__(X.shape[0], precision, **kw)
        self._x = X
        self._params = params
        self._spec = spec

    def _row_block(self, start, stop):
        blk = _grad_block(self._x[start:stop], self._x, self._params, self._spec)
        return blk.astype(self.dtype, copy=False)

    def _diagonal(self):
        if self._spec.parameter == "outputscale":
            return np.full(self.n, softplus_grad(self._params.raw_outputscale))
        return np.zeros(self.n)  # lengthscale derivative vanishes at zero distance


def kernel_hyper_grad(X, params: HyperParams, spec: KernelGradSpec,
                      precision: str = "f64") -> LinearOperator:
    """Operator for d K_hat / d raw_theta, chain-ruled through the softplus.

    The noise derivative is softplus'(raw_noise) * I; the mean constant does
    not enter K_hat, so its operator is zero.
    """
    X = np.asarray(X, dtype=float)
    spec.validate(params)
    n = X.shape[0]
    if spec.parameter == "noise":
        return DiagonalOperator(np.full(n, softplus_grad(params.raw_noise)), precision=precision)
    if spec.parameter == "mean":
        return DiagonalOperator(np.zeros(n), precision=precision)
    return KernelGradOperator(X, params, spec, precision=precision)


def dense_kernel_grads(X, params: HyperParams):
    """Yield (spec, dense d K / d raw) for lengthscales and outputscale.

    Shares the distance and exponential intermediates across parameters;
    used by the exact-inference gradient path where each matrix is consumed
    once. Noise and mean derivatives have closed forms and are not yielded.
    """
    X = np.asarray(X, dtype=float)
    Xs = _scaled(X, params)
    sq = cdist(Xs, Xs, "sqeuclidean")
    r = np.sqrt(sq)
    e = np.exp(-_SQRT5 * r)
    s2 = params.outputscale
    common = (5.0 / 3.0) * s2 * (1.0 + _SQRT5 * r) * e
    for j in range(params.dim):
        ell = params.lengthscales[j]
        diff_sq = (Xs[:, j, None] - Xs[None, :, j]) ** 2
        yield (KernelGradSpec("lengthscale", j),
               softplus_grad(params.raw_lengthscales[j]) * common * diff_sq / ell)
    out_grad = softplus_grad(params.raw_outputscale) * (1.0 + _SQRT5 * r + (5.0 / 3.0) * sq) * e
    yield KernelGradSpec("outputscale"), out_grad


class ShiftedKernelOperator(BlockRowOperator):
    """K_hat = K(X, X) + noise * I as a lazy symmetric PSD operator.

    The precision mode fixes the arithmetic of every product; kernel entries
    are evaluated in float64 and rounded once to the operator dtype.
    """

    def __init__(self, X, params: HyperParams, precision: str = "f64", **kw):
        X, _ = _check_inputs(X, X, params)
        super().__init__(X.shape[0], precision, **kw)
        self._x = X
        self._params = params

    @property
    def params(self) -> HyperParams:
        return self._params

    @property
    def noise(self) -> float:
        return self._params.noise

    def _row_block(self, start, stop):
        blk = matern52(self._x[start:stop], self._x, self._params)
        idx = np.arange(start, stop)
        blk[idx - start, idx] += self._params.noise
        return blk.astype(self.dtype, copy=False)

    def _diagonal(self):
        return matern52_diag(self._x, self._params) + self._params.noise
