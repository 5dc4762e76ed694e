import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krygp import (
    ContractViolation,
    DimensionMismatch,
    HyperParams,
    KernelGradSpec,
    kernel_hyper_grad,
    matern52,
    softplus,
    softplus_grad,
    softplus_inverse,
)

from conftest import dense_khat, random_params

SQRT5 = np.sqrt(5.0)


# --- transforms -------------------------------------------------------------

@given(st.floats(min_value=-13.9, max_value=1e6))
def test_softplus_positive(x):
    assert softplus(x) > 0


@settings(max_examples=200)
@given(st.floats(min_value=1e-6, max_value=1e6))
def test_softplus_round_trip(value):
    back = softplus(softplus_inverse(value))
    assert abs(back - value) <= 1e-12 * value


def test_softplus_inverse_rejects_nonpositive():
    with pytest.raises(ContractViolation):
        softplus_inverse(0.0)


def test_softplus_grad_is_sigmoid():
    x = np.linspace(-5, 5, 11)
    h = 1e-6
    fd = (softplus(x + h) - softplus(x - h)) / (2 * h)
    np.testing.assert_allclose(softplus_grad(x), fd, rtol=1e-8)


# --- hyperparameters --------------------------------------------------------

def test_hyperparams_vector_round_trip():
    p = HyperParams.from_constrained([0.5, 2.0], 1.5, 0.1, 0.3)
    q = HyperParams.from_vector(p.to_vector())
    assert np.array_equal(p.raw_lengthscales, q.raw_lengthscales)
    assert p.raw_outputscale == q.raw_outputscale
    assert p.raw_noise == q.raw_noise
    assert p.mean_constant == q.mean_constant


def test_hyperparams_constrained_values():
    p = HyperParams.from_constrained([0.5, 2.0], 1.5, 0.1)
    np.testing.assert_allclose(p.lengthscales, [0.5, 2.0], rtol=1e-12)
    assert abs(p.outputscale - 1.5) < 1e-12
    assert abs(p.noise - 0.1) < 1e-13


# --- kernel values ----------------------------------------------------------

def test_matern_zero_distance_gives_outputscale():
    p = HyperParams.from_constrained([0.7, 1.3], 2.5, 0.1)
    x = np.array([[0.4, -1.2]])
    np.testing.assert_allclose(matern52(x, x, p), [[2.5]], rtol=1e-14)


def test_matern_two_point_formula():
    # scalar oracle: evaluate the closed form directly at a known scaled distance
    p = HyperParams.from_constrained([2.0], 1.0, 0.1)
    x = np.array([[0.0]])
    z = np.array([[3.0]])
    r = 3.0 / 2.0
    expected = (1 + SQRT5 * r + 5 * r ** 2 / 3) * np.exp(-SQRT5 * r)
    np.testing.assert_allclose(matern52(x, z, p), [[expected]], rtol=1e-14)


def test_matern_dimension_permutation_invariance():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 3))
    z = rng.normal(size=(5, 3))
    p = HyperParams.from_constrained([0.5, 1.0, 2.0], 1.2, 0.1)
    perm = [2, 0, 1]
    p_perm = HyperParams.from_constrained(p.lengthscales[perm], 1.2, 0.1)
    np.testing.assert_allclose(matern52(x, z, p), matern52(x[:, perm], z[:, perm], p_perm),
                               rtol=1e-14)


def test_matern_symmetric_on_same_inputs():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20, 2))
    K = matern52(x, x, random_params(rng, 2))
    np.testing.assert_allclose(K, K.T, rtol=0, atol=1e-15)


def test_matern_dimension_mismatch():
    p = HyperParams.from_constrained([1.0, 1.0], 1.0, 0.1)
    with pytest.raises(DimensionMismatch):
        matern52(np.zeros((3, 3)), np.zeros((3, 3)), p)


@settings(deadline=None, max_examples=20)
@given(st.integers(min_value=2, max_value=60), st.integers(min_value=0, max_value=2 ** 31))
def test_shifted_kernel_passes_cholesky(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    params = random_params(rng, 3)
    np.linalg.cholesky(dense_khat(x, params))  # raises if not PSD


def test_shifted_kernel_cholesky_n500():
    rng = np.random.default_rng(123)
    x = rng.normal(size=(500, 4))
    np.linalg.cholesky(dense_khat(x, random_params(rng, 4)))


# --- kernel hyper-gradients -------------------------------------------------

def test_noise_grad_is_scaled_identity():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(8, 2))
    p = random_params(rng, 2)
    op = kernel_hyper_grad(x, p, KernelGradSpec("noise"))
    v = rng.normal(size=8)
    np.testing.assert_allclose(op.matvec(v), softplus_grad(p.raw_noise) * v, rtol=1e-14)


def test_mean_grad_operator_is_zero():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 2))
    op = kernel_hyper_grad(x, random_params(rng, 2), KernelGradSpec("mean"))
    assert np.array_equal(op.to_dense(), np.zeros((5, 5)))


def test_unknown_parameter_rejected():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(4, 2))
    p = random_params(rng, 2)
    with pytest.raises(ContractViolation):
        kernel_hyper_grad(x, p, KernelGradSpec("amplitude"))
    with pytest.raises(ContractViolation):
        kernel_hyper_grad(x, p, KernelGradSpec("lengthscale", 5))


def test_outputscale_grad_structure():
    # dK/d raw_outputscale = softplus'(raw) * K / s^2, checked entrywise at n=2
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 2))
    p = random_params(rng, 2)
    G = kernel_hyper_grad(x, p, KernelGradSpec("outputscale")).to_dense()
    K = np.asarray(matern52(x, x, p))
    expected = softplus_grad(p.raw_outputscale) * K / p.outputscale
    np.testing.assert_allclose(G, expected, rtol=1e-12)


def test_lengthscale_grad_vanishes_on_duplicate_inputs():
    p = HyperParams.from_constrained([0.8, 1.1], 1.3, 0.2)
    x = np.array([[0.3, -0.4], [0.3, -0.4], [1.0, 2.0]])  # rows 0 and 1 coincide
    G = kernel_hyper_grad(x, p, KernelGradSpec("lengthscale", 0)).to_dense()
    assert G[0, 0] == 0.0 and G[0, 1] == 0.0 and G[1, 0] == 0.0
    assert G[2, 2] == 0.0  # diagonal always at zero distance


def _fd_khat_grad(x, params, index, step=1e-6):
    vec = params.to_vector()
    plus, minus = vec.copy(), vec.copy()
    plus[index] += step
    minus[index] -= step
    return (dense_khat(x, HyperParams.from_vector(plus))
            - dense_khat(x, HyperParams.from_vector(minus))) / (2 * step)


@pytest.mark.parametrize("seed", range(5))
def test_all_hyper_grads_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    x = rng.normal(size=(15, 3))
    params = random_params(rng, 3)
    for idx, spec in enumerate(params.grad_specs()):
        if spec.parameter == "mean":
            continue
        G = kernel_hyper_grad(x, params, spec).to_dense()
        fd = _fd_khat_grad(x, params, idx)
        scale = max(np.abs(fd).max(), 1e-12)
        assert np.abs(G - fd).max() <= 1e-5 * scale, spec
