"""Linear operators over symmetric PSD matrices.

Solvers in this package only ever touch an operator through matrix-vector
products, the diagonal, and (for small systems) an explicit dense form, so
large kernel matrices never have to be materialized except on the Cholesky
oracle path. Operators are immutable after construction and safe to share
across threads; ``matvec`` is reentrant.
"""

from __future__ import annotations

import numpy as np

from .errors import CapacityError, ContractViolation, DimensionMismatch

DEFAULT_DENSE_CAP = 20000

_DTYPES = {"f32": np.float32, "f64": np.float64}


def resolve_precision(precision: str) -> np.dtype:
    """Map a precision mode name ('f32' or 'f64') to a numpy dtype."""
    try:
        return np.dtype(_DTYPES[precision])
    except KeyError:
        raise ContractViolation(
            f"unknown precision mode {precision!r}; expected one of {sorted(_DTYPES)}"
        ) from None


class LinearOperator:
    """Symmetric PSD operator exposing matvec, diagonal and optional dense form.

    Parameters
    ----------
    n : int
        Dimension of the (square) operator.
    precision : str
        Arithmetic mode for all products, 'f32' or 'f64'.
    dense_cap : int
        Largest n for which ``to_dense`` is permitted.
    """

    def __init__(self, n: int, precision: str = "f64", dense_cap: int = DEFAULT_DENSE_CAP):
        if n < 1:
            raise ContractViolation(f"operator dimension must be positive, got {n}")
        self._n = int(n)
        self._precision = precision
        self._dtype = resolve_precision(precision)
        self._dense_cap = int(dense_cap)

    @property
    def n(self) -> int:
        return self._n

    @property
    def shape(self) -> tuple[int, int]:
        return (self._n, self._n)

    @property
    def precision(self) -> str:
        return self._precision

    @property
    def dtype(self) -> np.dtype:
        return self._dtype

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Return ``A @ v`` computed in the operator's precision mode."""
        v = np.asarray(v)
        if v.ndim != 1 or v.shape[0] != self._n:
            raise DimensionMismatch(
                f"matvec expects a vector of length {self._n}, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ContractViolation("matvec input contains non-finite entries")
        return self._matmat(v.astype(self._dtype, copy=False)[:, None])[:, 0]

    def matmat(self, V: np.ndarray) -> np.ndarray:
        """Return ``A @ V`` for a block of right-hand sides (n x t)."""
        V = np.asarray(V)
        if V.ndim != 2 or V.shape[0] != self._n:
            raise DimensionMismatch(
                f"matmat expects an ({self._n} x t) block, got shape {V.shape}"
            )
        if not np.all(np.isfinite(V)):
            raise ContractViolation("matmat input contains non-finite entries")
        return self._matmat(V.astype(self._dtype, copy=False))

    def diagonal(self) -> np.ndarray:
        return self._diagonal().astype(self._dtype, copy=False)

    def to_dense(self) -> np.ndarray:
        """Materialize the operator; equals matvec applied to each basis vector."""
        if self._n > self._dense_cap:
            raise CapacityError(
                f"dense materialization of n={self._n} exceeds cap {self._dense_cap}"
            )
        return self._to_dense().astype(self._dtype, copy=False)

    # subclass surface

    def _matmat(self, V: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _diagonal(self) -> np.ndarray:
        raise NotImplementedError

    def _to_dense(self) -> np.ndarray:
        return self._matmat(np.eye(self._n, dtype=self._dtype))


class DenseOperator(LinearOperator):
    """Operator backed by an explicit symmetric matrix (tests, small systems)."""

    def __init__(self, matrix: np.ndarray, precision: str = "f64",
                 dense_cap: int = DEFAULT_DENSE_CAP):
        matrix = np.asarray(matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {matrix.shape}")
        super().__init__(matrix.shape[0], precision, dense_cap)
        self._matrix = matrix.astype(self.dtype)

    def _matmat(self, V):
        return self._matrix @ V

    def _diagonal(self):
        return np.diagonal(self._matrix).copy()

    def _to_dense(self):
        return self._matrix.copy()


class DiagonalOperator(LinearOperator):
    """Operator ``diag(d)``; also covers scaled identities and the zero operator."""

    def __init__(self, diag: np.ndarray, precision: str = "f64",
                 dense_cap: int = DEFAULT_DENSE_CAP):
        diag = np.atleast_1d(np.asarray(diag))
        super().__init__(diag.shape[0], precision, dense_cap)
        self._diag = diag.astype(self.dtype)

    def _matmat(self, V):
        return self._diag[:, None] * V

    def _diagonal(self):
        return self._diag.copy()

    def _to_dense(self):
        return np.diag(self._diag)


def identity(n: int, precision: str = "f64") -> DiagonalOperator:
    return DiagonalOperator(np.ones(n), precision=precision)


class BlockRowOperator(LinearOperator):
    """Base for operators whose rows are recomputed lazily in blocks.

    The memory footprint of a product is O(block_size * n). Small operators
    (n <= cache_limit) cache the dense matrix after the first product instead,
    trading memory for the repeated-row-evaluation cost that dominates
    desk-scale benchmarks.
    """

    def __init__(self, n: int, precision: str = "f64", *,
                 dense_cap: int = DEFAULT_DENSE_CAP, block_size: int = 512,
                 cache_limit: int = 4096):
        super().__init__(n, precision, dense_cap)
        self._block_size = int(block_size)
        self._cache_limit = int(cache_limit)
        self._cached = None

    def _row_block(self, start: int, stop: int) -> np.ndarray:
        """Rows [start, stop) of the dense matrix, in operator precision."""
        raise NotImplementedError

    def _dense(self) -> np.ndarray:
        if self._cached is None:
            blocks = [self._row_block(i, min(i + self._block_size, self.n))
                      for i in range(0, self.n, self._block_size)]
            self._cached = np.concatenate(blocks, axis=0)
        return self._cached

    def _matmat(self, V):
        if self._cached is not None or self.n <= self._cache_limit:
            return self._dense() @ V
        out = np.empty((self.n, V.shape[1]), dtype=self.dtype)
        for i in range(0, self.n, self._block_size):
            j = min(i + self._block_size, self.n)
            out[i:j] = self._row_block(i, j) @ V
        return out

    def _to_dense(self):
        if self._cached is not None or self.n <= self._cache_limit:
            return self._dense().copy()
        return np.concatenate(
            [self._row_block(i, min(i + self._block_size, self.n))
             for i in range(0, self.n, self._block_size)], axis=0)
