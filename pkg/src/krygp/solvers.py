"""Iterative numerical core: pivoted Cholesky, preconditioned CG, Lanczos,
stochastic Lanczos quadrature, and Hutchinson trace estimation.

All stochastic pieces draw per-probe RNG streams from (seed, probe index),
so results are reproducible and independent of how probe loops are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    ContractViolation,
    DimensionMismatch,
    NumericalBreakdown,
    NumericalDivergence,
)
from .linop import LinearOperator

DEFAULT_MAX_CG_ITERS = 500
# Cadence (in iterations) at which CG re-evaluates the true residual b - A x
# instead of trusting the recurrence.
_RESIDUAL_REFRESH = 10
_LANCZOS_BREAKDOWN_RTOL = 1e-10
_PIVOT_NEGATIVE_TOL = -1e-10


def probe_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for probe `index` under root `seed`."""
    return np.random.default_rng([int(seed), int(index)])


def rademacher_probes(n: int, num_probes: int, seed: int) -> np.ndarray:
    """(n x B) matrix of i.i.d. +/-1 columns, one RNG stream per column."""
    cols = [probe_rng(seed, b).integers(0, 2, size=n) * 2.0 - 1.0
            for b in range(num_probes)]
    return np.column_stack(cols)


def pivoted_cholesky(diag: np.ndarray, column_access, w: int,
                     rel_trace_tol: float = 1e-12) -> np.ndarray:
    """Greedy low-rank factor L (n x w') with L L^T ~ K, w' <= w.

    Pivots on the largest remaining diagonal residual (ties broken by lowest
    index) and stops after `w` pivots or once the residual trace drops below
    rel_trace_tol times the original trace. `column_access(i)` must return
    column i of K.
    """
    d = np.array(diag, dtype=float)
    n = d.shape[0]
    if np.any(d <= 0):
        raise ContractViolation("pivoted_cholesky requires a positive diagonal")
    if not 0 <= w <= n:
        raise ContractViolation(f"rank w={w} must satisfy 0 <= w <= n={n}")
    trace0 = d.sum()
    L = np.zeros((n, w))
    for m in range(w):
        if d.sum() < rel_trace_tol * trace0:
            return L[:, :m]
        i = int(np.argmax(d))
        pivot = d[i]
        if pivot <= 0.0:
            return L[:, :m]
        col = np.asarray(column_access(i), dtype=float)
        if col.shape != (n,):
            raise DimensionMismatch(
                f"column_access({i}) returned shape {col.shape}, expected ({n},)")
        if m:
            col = col - L[:, :m] @ L[i, :m]
        root = np.sqrt(pivot)
        L[:, m] = col / root
        L[i, m] = root
        d -= L[:, m] ** 2
        d[i] = 0.0
        if d.min() < _PIVOT_NEGATIVE_TOL:
            raise NumericalBreakdown(
                f"residual diagonal went negative ({d.min():.3e}) at pivot {m}")
        np.clip(d, 0.0, None, out=d)
    return L


class Preconditioner:
    """Apply (L L^T + noise I)^{-1} through the Woodbury identity.

    The w x w inner system (I + L^T L / noise) is factorized once at
    construction; apply never materializes an n x n matrix.
    """

    def __init__(self, factor: np.ndarray, noise: float):
        factor = np.asarray(factor, dtype=float)
        if factor.ndim != 2:
            raise DimensionMismatch("preconditioner factor must be 2-D (n x w)")
        if noise <= 0:
            raise ContractViolation(f"noise must be positive, got {noise}")
        self.factor = factor
        self.noise = float(noise)
        self.rank = factor.shape[1]
        if self.rank:
            inner = factor.T @ factor / self.noise
            inner[np.diag_indices_from(inner)] += 1.0
            try:
                self._inner_chol = scipy.linalg.cho_factor(inner)
            except scipy.linalg.LinAlgError as exc:
                raise NumericalBreakdown(f"singular inner Woodbury system: {exc}") from exc
        else:
            self._inner_chol = None

    @property
    def n(self) -> int:
        return self.factor.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        """(L L^T + noise I)^{-1} v for a vector or column block."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise DimensionMismatch(
                f"preconditioner built for n={self.n}, got input of length {v.shape[0]}")
        if not self.rank:
            return v / self.noise
        inner = scipy.linalg.cho_solve(self._inner_chol, self.factor.T @ v)
        return (v - self.factor @ inner / self.noise) / self.noise


def kernel_preconditioner(diag: np.ndarray, column_access, w: int, noise: float) -> Preconditioner:
    """Rank-w pivoted-Cholesky preconditioner for K + noise I."""
    if w == 0:
        return Preconditioner(np.zeros((len(diag), 0)), noise)
    return Preconditioner(pivoted_cholesky(diag, column_access, w), noise)


@dataclass
class SolveReport:
    """Batched CG output: solution columns plus per-column convergence data."""

    solutions: np.ndarray
    iterations: np.ndarray
    residual_norms: np.ndarray
    converged: np.ndarray

    @property
    def solution(self) -> np.ndarray:
        """First (often only) solution column."""
        return self.solutions[:, 0]


def pcg_solve(A: LinearOperator, B: np.ndarray, eps: float,
              max_iters: int = DEFAULT_MAX_CG_ITERS,
              preconditioner: Preconditioner | None = None) -> SolveReport:
    """Preconditioned CG on A x = b for each column b of B.

    Convergence is tested on the true (unpreconditioned) relative residual
    ||A x - b|| / ||b||, refreshed from scratch every few iterations so the
    recurrence cannot drift; the preconditioner only redefines the inner
    products. A column stops once its residual is <= eps or after max_iters.
    Nonzero right-hand sides always get at least one iteration: the zero
    vector technically satisfies any eps >= 1, but returning it would make
    loose-tolerance solves degenerate no-ops.
    """
    if eps <= 0:
        raise ContractViolation(f"tolerance must be positive, got {eps}")
    if max_iters < 1:
        raise ContractViolation(f"max_iters must be >= 1, got {max_iters}")
    B = np.asarray(B)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != A.n:
        raise DimensionMismatch(f"rhs length {B.shape[0]} != operator dim {A.n}")
    if not np.all(np.isfinite(B)):
        raise ContractViolation("right-hand sides contain non-finite entries")

    dtype = A.dtype
    B = B.astype(dtype, copy=False)
    n, t = B.shape
    X = np.zeros((n, t), dtype=dtype)
    iterations = np.zeros(t, dtype=int)
    final_rel = np.zeros(t)
    converged = np.zeros(t, dtype=bool)

    b_norm = np.linalg.norm(B, axis=0)
    zero_rhs = b_norm == 0
    converged[zero_rhs] = True  # x = 0 solves exactly

    active = np.flatnonzero(~zero_rhs)
    if active.size == 0:
        return SolveReport(X, iterations, final_rel, converged)

    R = B[:, active].copy()
    rel = np.linalg.norm(R, axis=0) / b_norm[active]
    Z = preconditioner.apply(R) if preconditioner is not None else R
    D = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)

    for it in range(1, max_iters + 1):
        if active.size == 0:
            break
        AD = A.matmat(D)
        dAd = np.einsum("ij,ij->j", D, AD)
        if np.any(dAd <= 0):
            col = int(active[int(np.argmax(dAd <= 0))])
            raise NumericalBreakdown(
                f"CG search direction with nonpositive curvature on column {col}; "
                "operator is not SPD at working precision")
        alpha = rz / dAd
        X[:, active] += alpha * D
        R -= alpha * AD
        if it % _RESIDUAL_REFRESH == 0:
            R = B[:, active] - A.matmat(X[:, active])
        rel = np.linalg.norm(R, axis=0) / b_norm[active]
        if not np.all(np.isfinite(rel)):
            col = int(active[int(np.argmax(~np.isfinite(rel)))])
            raise NumericalDivergence(f"CG residual diverged (NaN/Inf) on column {col}")
        hit = rel <= eps
        if hit.any():
            idx = active[hit]
            converged[idx] = True
            iterations[idx] = it
            final_rel[idx] = rel[hit]
            keep = ~hit
            active, R, D, rz, rel = active[keep], R[:, keep], D[:, keep], rz[keep], rel[keep]
            if active.size == 0:
                break
        Z = preconditioner.apply(R) if preconditioner is not None else R
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = rz_new / rz
        D = Z + beta * D
        rz = rz_new

    if active.size:
        iterations[active] = max_iters
        final_rel[active] = rel
    return SolveReport(X, iterations, final_rel, converged)


@dataclass
class LanczosFactors:
    """Rank-k Lanczos decomposition A ~ Q T Q^T on the Krylov subspace.

    `final_beta` is the recurrence coefficient that would couple to the next
    column; the factorization residual A Q - Q T lives entirely in the last
    column with norm `final_beta`.
    """

    q_mat: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    rank: int
    requested_rank: int
    final_beta: float

    @property
    def broke_down(self) -> bool:
        return self.rank < self.requested_rank

    def tridiagonal(self) -> np.ndarray:
        T = np.diag(self.alphas)
        if self.rank > 1:
            T += np.diag(self.betas, 1) + np.diag(self.betas, -1)
        return T

    def eigendecompose(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues (ascending) and eigenvectors of the tridiagonal T."""
        if self.rank == 1:
            return self.alphas.astype(float).copy(), np.ones((1, 1))
        return scipy.linalg.eigh_tridiagonal(
            self.alphas.astype(float), self.betas.astype(float))


def lanczos(A: LinearOperator, q0: np.ndarray, k: int,
            reorthogonalize: bool = True) -> LanczosFactors:
    """Lanczos tridiagonalization of A started at q0 / ||q0||.

    With reorthogonalization on, each residual is re-projected against all
    previous columns (two classical Gram-Schmidt passes). Terminates early
    when the next coupling beta falls below 1e-10 times a running estimate
    of ||A||, reporting the achieved rank.
    """
    if not 1 <= k <= A.n:
        raise ContractViolation(f"Lanczos rank k={k} must satisfy 1 <= k <= n={A.n}")
    q0 = np.asarray(q0, dtype=A.dtype)
    nrm = np.linalg.norm(q0)
    if nrm == 0 or not np.isfinite(nrm):
        raise ContractViolation("Lanczos start vector must be nonzero and finite")

    n = A.n
    Q = np.zeros((n, k), dtype=A.dtype)
    alphas = np.zeros(k)
    betas = np.zeros(max(k - 1, 0))
    Q[:, 0] = q0 / nrm

    rank = k
    final_beta = 0.0
    norm_est = 0.0
    beta_prev = 0.0
    for j in range(k):
        u = A.matvec(Q[:, j])
        alpha = float(Q[:, j] @ u)
        u = u - alpha * Q[:, j]
        if j > 0:
            u -= beta_prev * Q[:, j - 1]
        if reorthogonalize:
            basis = Q[:, :j + 1]
            for _ in range(2):
                u -= basis @ (basis.T @ u)
        beta = float(np.linalg.norm(u))
        alphas[j] = alpha
        norm_est = max(norm_est, abs(alpha) + beta + beta_prev)
        if j == k - 1:
            final_beta = beta
            break
        if beta <= _LANCZOS_BREAKDOWN_RTOL * norm_est:
            rank = j + 1
            final_beta = beta
            break
        betas[j] = beta
        Q[:, j + 1] = u / beta
        beta_prev = beta

    return LanczosFactors(
        q_mat=Q[:, :rank],
        alphas=alphas[:rank],
        betas=betas[:max(rank - 1, 0)],
        rank=rank,
        requested_rank=k,
        final_beta=final_beta,
    )


def slq_logdet(A: LinearOperator, num_probes: int, rank: int, seed: int) -> float:
    """Stochastic Lanczos quadrature estimate of log det A for SPD A.

    Each Rademacher probe z_b seeds a Lanczos run; the quadrature weight of
    probe b is n * e1^T log(T_b) e1. Deterministic given the seed.
    """
    if num_probes < 1:
        raise ContractViolation(f"num_probes must be >= 1, got {num_probes}")
    n = A.n
    k = min(rank, n)
    total = 0.0
    for b in range(num_probes):
        z = probe_rng(seed, b).integers(0, 2, size=n) * 2.0 - 1.0
        factors = lanczos(A, z, k)
        theta, vecs = factors.eigendecompose()
        if theta.min() <= 0:
            raise NumericalBreakdown(
                f"nonpositive Ritz value {theta.min():.3e} on probe {b}; "
                "operator is not SPD at working precision")
        total += float(np.sum(vecs[0, :] ** 2 * np.log(theta)))
    return n * total / num_probes


def hutchinson_trace(apply_inverse, G: LinearOperator, probes: np.ndarray) -> float:
    """Estimate tr(A^{-1} G) as mean_b z_b^T A^{-1} G z_b.

    `apply_inverse` maps a block of right-hand sides to A^{-1} applied to it
    (typically CG solves batched with the mean solve); probes are i.i.d.
    Rademacher columns.
    """
    probes = np.asarray(probes, dtype=float)
    if probes.ndim != 2:
        raise DimensionMismatch("probes must be an (n x B) matrix")
    U = np.asarray(apply_inverse(probes), dtype=float)
    if U.shape != probes.shape:
        raise DimensionMismatch(
            f"apply_inverse returned shape {U.shape}, expected {probes.shape}")
    GZ = G.matmat(probes)
    return float(np.mean(np.einsum("ij,ij->j", U, GZ)))
