import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krygp import (
    CapacityError,
    ContractViolation,
    DenseOperator,
    DiagonalOperator,
    DimensionMismatch,
    HyperParams,
    ShiftedKernelOperator,
    identity,
    matern52,
)

from conftest import dense_khat, random_params


def test_identity_matvec():
    op = identity(3)
    assert np.array_equal(op.matvec(np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])


def test_diagonal_matvec():
    op = DiagonalOperator([2.0, 3.0])
    assert np.array_equal(op.matvec(np.array([1.0, 1.0])), [2.0, 3.0])


def test_matvec_zero_vector_is_zero():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(6, 6))
    op = DenseOperator(A + A.T)
    assert np.array_equal(op.matvec(np.zeros(6)), np.zeros(6))


def test_matvec_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        identity(3).matvec(np.ones(4))


def test_matvec_rejects_nonfinite():
    with pytest.raises(ContractViolation):
        identity(3).matvec(np.array([1.0, np.nan, 0.0]))


def test_kernel_operator_matches_dense_column():
    # first column of K_hat for a tiny Matern system, via an independent
    # dense evaluation of the kernel formula
    x = np.array([[0.0], [1.0], [2.0]])
    params = HyperParams.from_constrained([1.0], 1.0, 0.1)
    op = ShiftedKernelOperator(x, params)
    e1 = np.array([1.0, 0.0, 0.0])
    expected = dense_khat(x, params)[:, 0]
    np.testing.assert_allclose(op.matvec(e1), expected, rtol=1e-14)


def test_to_dense_identity():
    assert np.array_equal(identity(2).to_dense(), np.eye(2))
    assert np.array_equal(DiagonalOperator([2.0, 3.0]).to_dense(), np.diag([2.0, 3.0]))


def test_to_dense_matches_basis_probing():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(4, 4))
    A = A @ A.T
    op = DenseOperator(A)
    probed = np.column_stack([op.matvec(np.eye(4)[:, i]) for i in range(4)])
    assert np.array_equal(op.to_dense(), probed)


def test_to_dense_cap():
    op = DiagonalOperator(np.ones(5), dense_cap=4)
    with pytest.raises(CapacityError):
        op.to_dense()


def test_kernel_operator_dense_agrees_with_matvec_on_basis():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 2))
    params = random_params(rng, 2)
    op = ShiftedKernelOperator(x, params)
    dense = op.to_dense()
    for i in range(0, 20, 5):
        e = np.zeros(20)
        e[i] = 1.0
        assert np.array_equal(op.matvec(e), dense[:, i])


def test_blocked_matvec_matches_dense_path():
    # force the lazy block path with a tiny cache limit
    rng = np.random.default_rng(4)
    x = rng.normal(size=(37, 3))
    params = random_params(rng, 3)
    lazy = ShiftedKernelOperator(x, params, block_size=8, cache_limit=0)
    cached = ShiftedKernelOperator(x, params)
    v = rng.normal(size=37)
    np.testing.assert_allclose(lazy.matvec(v), cached.matvec(v), rtol=1e-13)
    np.testing.assert_allclose(lazy.to_dense(), cached.to_dense(), rtol=0, atol=0)


@settings(deadline=None, max_examples=25)
@given(st.integers(min_value=1, max_value=30), st.integers(min_value=0, max_value=2 ** 31))
def test_symmetry_property(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    params = random_params(rng, 2)
    op = ShiftedKernelOperator(x, params)
    u, v = rng.normal(size=n), rng.normal(size=n)
    left = u @ op.matvec(v)
    right = v @ op.matvec(u)
    scale = np.abs(op.to_dense()).max() * np.linalg.norm(u) * np.linalg.norm(v)
    assert abs(left - right) <= 1e-12 * max(scale, 1e-30)


@settings(deadline=None, max_examples=25)
@given(st.integers(min_value=2, max_value=25), st.integers(min_value=0, max_value=2 ** 31))
def test_shifted_psd_lower_bound(n, seed):
    # v' K_hat v >= noise ||v||^2 for every v
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    params = random_params(rng, 2)
    op = ShiftedKernelOperator(x, params)
    v = rng.normal(size=n)
    quad = v @ op.matvec(v)
    assert quad >= params.noise * (v @ v) * (1 - 1e-10)


def test_dense_then_matvec_within_ulps():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 2))
    params = random_params(rng, 2)
    op = ShiftedKernelOperator(x, params)
    v = rng.normal(size=30)
    a = op.matvec(v)
    b = op.to_dense() @ v
    # 4 ulps at float64 on the result scale
    tol = 4 * np.spacing(np.abs(a).max())
    assert np.abs(a - b).max() <= tol


def test_batched_matmat_consistent_with_single_matvecs():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(25, 2))
    params = random_params(rng, 2)
    op = ShiftedKernelOperator(x, params)
    V = rng.normal(size=(25, 4))
    batched = op.matmat(V)
    singles = np.column_stack([op.matvec(V[:, j]) for j in range(4)])
    assert np.abs(batched - singles).max() <= 1e-10 * np.abs(singles).max()


def test_float32_precision_mode():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(10, 2))
    params = random_params(rng, 2)
    op32 = ShiftedKernelOperator(x, params, precision="f32")
    op64 = ShiftedKernelOperator(x, params, precision="f64")
    v = rng.normal(size=10)
    out32 = op32.matvec(v)
    assert out32.dtype == np.float32
    assert op64.matvec(v).dtype == np.float64
    np.testing.assert_allclose(out32, op64.matvec(v), rtol=1e-5)


def test_diagonal_accessor():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(12, 2))
    params = random_params(rng, 2)
    op = ShiftedKernelOperator(x, params)
    expected = np.full(12, params.outputscale + params.noise)
    np.testing.assert_allclose(op.diagonal(), expected, rtol=1e-14)
    np.testing.assert_allclose(op.diagonal(), np.diagonal(op.to_dense()), rtol=1e-14)
