"""Tests for neural module."""

import logging

import numpy as np
import pytest

from kkl_tune.errors import InputError
from kkl_tune.neural import (
    SCALE_FLOOR,
    Adam,
    MlpParams,
    Normalizer,
    backward,
    forward,
    forward_with_tape,
    grad_params,
    input_jacobian,
    jvp,
    jvp_backward,
    silu,
    silu_derivative,
    silu_second_derivative,
)

# 3 inputs, five hidden layers of 50, 2 outputs
ARCHITECTURE = [3, 50, 50, 50, 50, 50, 2]


def sampled_fd_gradient(params, loss, rng, per_array=20, eps=1e-6):
    """Central differences on a random subset of every parameter array."""
    estimates, picks = [], []
    for p in params.parameters():
        flat = p.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_array, flat.size), replace=False)
        values = []
        for i in idx:
            saved = flat[i]
            flat[i] = saved + eps
            up = loss()
            flat[i] = saved - eps
            down = loss()
            flat[i] = saved
            values.append((up - down) / (2 * eps))
        estimates.append(np.array(values))
        picks.append(idx)
    return estimates, picks


def assert_gradients_close(grads, estimates, picks, rtol):
    analytic = np.concatenate([g.reshape(-1)[idx] for g, idx in zip(grads, picks)])
    numeric = np.concatenate(estimates)
    assert np.linalg.norm(analytic - numeric) <= rtol * np.linalg.norm(numeric)


class TestActivations:
    """Test SiLU and its derivatives."""

    def test_silu_values(self):
        """Test silu(0) = 0 and the large-argument limits."""
        assert silu(np.array(0.0)) == 0.0
        assert silu(np.array(50.0)) == pytest.approx(50.0)
        assert silu(np.array(-50.0)) == pytest.approx(0.0, abs=1e-18)

    def test_derivatives_match_finite_differences(self):
        """Test first and second derivatives against central differences."""
        u = np.linspace(-6, 6, 101)
        h = 1e-5
        np.testing.assert_allclose(silu_derivative(u), (silu(u + h) - silu(u - h)) / (2 * h), atol=1e-9)
        np.testing.assert_allclose(
            silu_second_derivative(u),
            (silu_derivative(u + h) - silu_derivative(u - h)) / (2 * h),
            atol=1e-9,
        )


class TestNormalizer:
    """Test standardization."""

    def test_standardized_statistics(self):
        """Test zero mean and unit std after transform."""
        rng = np.random.default_rng(0)
        data = rng.normal(3.0, 2.0, size=(1000, 3))
        norm = Normalizer.fit(data)
        out = norm.transform(data)
        assert np.max(np.abs(out.mean(axis=0))) < 1e-10
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-10)

    def test_inverse(self):
        """Test that inverse_transform undoes transform."""
        rng = np.random.default_rng(1)
        data = rng.normal(size=(50, 2))
        norm = Normalizer.fit(data)
        np.testing.assert_allclose(norm.inverse_transform(norm.transform(data)), data, atol=1e-12)

    def test_constant_column_floored(self, caplog):
        """Test the scale floor and warning on a constant column."""
        data = np.column_stack([np.full(10, 4.0), np.arange(10.0)])
        with caplog.at_level(logging.WARNING):
            norm = Normalizer.fit(data, "x")
        assert norm.mean[0] == 4.0
        assert norm.scale[0] == SCALE_FLOOR
        assert "Zero-variance" in caplog.text

    def test_serialization(self):
        """Test to_dict/from_dict."""
        norm = Normalizer(mean=[1.0, 2.0], scale=[3.0, 4.0])
        restored = Normalizer.from_dict(norm.to_dict())
        np.testing.assert_array_equal(restored.mean, norm.mean)
        np.testing.assert_array_equal(restored.scale, norm.scale)

    def test_empty_rejected(self):
        """Test that fitting on no data raises."""
        with pytest.raises(InputError):
            Normalizer.fit(np.zeros((0, 2)))


class TestMlpParams:
    """Test network parameter containers."""

    def test_glorot_init_shapes(self):
        """Test weight shapes and zero biases."""
        params = MlpParams.init(ARCHITECTURE, seed=0)
        assert [W.shape for W in params.weights] == [(50, 3), (50, 50), (50, 50), (50, 50), (50, 50), (2, 50)]
        assert all(np.all(b == 0) for b in params.biases)
        limit = np.sqrt(6.0 / 53)
        assert np.max(np.abs(params.weights[0])) <= limit

    def test_init_deterministic(self):
        """Test seeded initialization."""
        a = MlpParams.init([2, 4, 1], seed=5)
        b = MlpParams.init([2, 4, 1], seed=5)
        np.testing.assert_array_equal(a.weights[0], b.weights[0])

    def test_shape_validation(self):
        """Test that inconsistent arrays are rejected."""
        with pytest.raises(InputError):
            MlpParams([2, 3], [np.zeros((2, 3))], [np.zeros(3)])

    def test_unknown_activation(self):
        """Test that an unknown activation is rejected."""
        with pytest.raises(InputError):
            MlpParams.init([2, 3], seed=0, activation="relu6")

    def test_serialization_preserves_outputs(self):
        """Test that a restored network computes the same function."""
        params = MlpParams.init([2, 5, 5, 3], seed=1, activation="tanh")
        restored = MlpParams.from_dict(params.to_dict())
        x = np.random.default_rng(0).normal(size=(4, 2))
        np.testing.assert_array_equal(forward(restored, x), forward(params, x))
        assert restored.activation == "tanh"

    def test_copy_is_independent(self):
        """Test that copies do not share arrays."""
        params = MlpParams.init([2, 3, 1], seed=0)
        clone = params.copy()
        clone.weights[0][0, 0] += 1.0
        assert params.weights[0][0, 0] != clone.weights[0][0, 0]
        assert params.is_finite()


class TestDifferentiation:
    """Test reverse- and forward-mode derivatives against finite differences."""

    @pytest.fixture
    def setup(self):
        rng = np.random.default_rng(0)
        params = MlpParams.init(ARCHITECTURE, seed=0)
        for b in params.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        inputs = rng.normal(size=(8, 3))
        return params, inputs, rng

    def test_forward_single_and_batch(self, setup):
        """Test that a single input gives a vector output."""
        params, inputs, _ = setup
        assert forward(params, inputs[0]).shape == (2,)
        np.testing.assert_allclose(forward(params, inputs)[0], forward(params, inputs[0]), atol=1e-12)

    def test_wrong_input_width(self, setup):
        """Test input width validation."""
        params, _, _ = setup
        with pytest.raises(InputError):
            forward(params, np.zeros((2, 4)))

    def test_parameter_gradients(self, setup):
        """Test grad_params against central differences."""
        params, inputs, rng = setup
        targets = rng.normal(size=(8, 2))
        _, grads = grad_params(params, inputs, targets)

        def loss():
            out = forward(params, inputs)
            return 0.5 * np.mean(np.sum((out - targets) ** 2, axis=1))

        estimates, picks = sampled_fd_gradient(params, loss, rng)
        assert_gradients_close(grads, estimates, picks, rtol=1e-5)

    def test_backward_input_gradient(self, setup):
        """Test the input gradient of the reverse pass."""
        params, inputs, rng = setup
        weights = rng.normal(size=(8, 2))
        _, tape = forward_with_tape(params, inputs)
        _, g_input = backward(params, tape, weights)
        eps = 1e-6
        numeric = np.zeros_like(inputs)
        for i in range(inputs.shape[0]):
            for j in range(inputs.shape[1]):
                up, down = inputs.copy(), inputs.copy()
                up[i, j] += eps
                down[i, j] -= eps
                numeric[i, j] = np.sum(weights * (forward(params, up) - forward(params, down))) / (2 * eps)
        np.testing.assert_allclose(g_input, numeric, rtol=1e-5, atol=1e-9)

    def test_input_jacobian(self, setup):
        """Test input_jacobian against central differences."""
        params, inputs, _ = setup
        J = input_jacobian(params, inputs)
        assert J.shape == (8, 2, 3)
        eps = 1e-6
        for j in range(3):
            step = np.zeros(3)
            step[j] = eps
            column = (forward(params, inputs + step) - forward(params, inputs - step)) / (2 * eps)
            np.testing.assert_allclose(J[:, :, j], column, rtol=1e-5, atol=1e-9)
        assert input_jacobian(params, inputs[0]).shape == (2, 3)

    def test_jvp_matches_jacobian(self, setup):
        """Test that the tangent output equals J @ tangent."""
        params, inputs, rng = setup
        tangents = rng.normal(size=inputs.shape)
        out, out_dot, _ = jvp(params, inputs, tangents)
        J = input_jacobian(params, inputs)
        np.testing.assert_allclose(out, forward(params, inputs), atol=1e-14)
        np.testing.assert_allclose(out_dot, np.einsum("bij,bj->bi", J, tangents), atol=1e-10)

    def test_jvp_tangent_shape_mismatch(self, setup):
        """Test tangent shape validation."""
        params, inputs, _ = setup
        with pytest.raises(InputError):
            jvp(params, inputs, np.zeros((8, 2)))

    @pytest.mark.parametrize("activation", ["silu", "tanh"])
    def test_jvp_backward(self, activation):
        """Test gradients of a loss on outputs and tangents."""
        rng = np.random.default_rng(1)
        params = MlpParams.init([3, 20, 20, 2], seed=2, activation=activation)
        for b in params.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        inputs = rng.normal(size=(6, 3))
        tangents = rng.normal(size=(6, 3))
        a = rng.normal(size=(6, 2))
        c = rng.normal(size=(6, 2))

        def loss():
            out, out_dot, _ = jvp(params, inputs, tangents)
            return 0.5 * np.sum((out - a) ** 2) + 0.5 * np.sum((out_dot - c) ** 2)

        out, out_dot, tape = jvp(params, inputs, tangents)
        grads = jvp_backward(params, tape, out - a, out_dot - c)
        estimates, picks = sampled_fd_gradient(params, loss, rng)
        assert_gradients_close(grads, estimates, picks, rtol=1e-5)


class TestAdam:
    """Test the Adam optimizer."""

    def test_first_step_is_signed_learning_rate(self):
        """Test that the bias-corrected first step has size lr."""
        p = [np.array([1.0, -1.0])]
        Adam(lr=0.1).step(p, [np.array([0.5, -2.0])])
        np.testing.assert_allclose(p[0], [0.9, -0.9], atol=1e-7)

    def test_minimizes_quadratic(self):
        """Test convergence on 0.5 ||p||^2."""
        p = [np.array([3.0, -2.0])]
        opt = Adam(lr=0.05)
        for _ in range(2000):
            opt.step(p, [p[0].copy()])
        assert np.max(np.abs(p[0])) < 0.05

    def test_state_serialization(self):
        """Test that a restored optimizer continues identically."""
        p_a = [np.array([1.0, 2.0])]
        opt_a = Adam(lr=0.01)
        for _ in range(3):
            opt_a.step(p_a, [2 * p_a[0]])
        opt_b = Adam.from_dict(opt_a.to_dict())
        p_b = [p_a[0].copy()]
        opt_a.step(p_a, [2 * p_a[0]])
        opt_b.step(p_b, [2 * p_b[0]])
        np.testing.assert_array_equal(p_a[0], p_b[0])
        assert opt_b.t == 4
