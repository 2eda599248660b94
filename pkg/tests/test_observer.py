"""Tests for observer module."""

import logging

import numpy as np
import pytest

from kkl_tune.errors import EstimationError, InputError
from kkl_tune.observer import (
    add_noise,
    contraction_check,
    error_heatmap,
    estimate,
    run_experiment,
    simulate_measurements,
)
from kkl_tune.sampling import backward_forward

X0 = np.array([0.5, 0.5])


class TestNoise:
    """Test measurement noise."""

    def test_zero_sigma_is_identity(self):
        """Test that sigma = 0 returns an unchanged copy."""
        y = np.arange(6.0).reshape(3, 2)
        out = add_noise(y, 0.0, seed=0)
        np.testing.assert_array_equal(out, y)
        assert out is not y

    def test_statistics(self):
        """Test mean and standard deviation over many draws."""
        noise = add_noise(np.zeros((1_000_000, 1)), 0.5, seed=1)
        assert abs(noise.mean()) < 0.0025
        assert noise.std() == pytest.approx(0.5, rel=0.01)

    def test_seeded(self):
        """Test that the seed fixes the draws."""
        a = add_noise(np.zeros((10, 1)), 0.3, seed=4)
        b = add_noise(np.zeros((10, 1)), 0.3, seed=4)
        np.testing.assert_array_equal(a, b)

    def test_negative_sigma(self):
        """Test that a negative sigma is rejected."""
        with pytest.raises(InputError):
            add_noise(np.zeros(3), -0.1, seed=0)


class TestEstimate:
    """Test the online filter and decoding."""

    def test_manifold_start_tracks_exactly(self, oracle, harmonic):
        """Test that z(0) = T x(0) gives an estimate on the true trajectory."""
        run = run_experiment(oracle, harmonic, 0.5, X0, duration=10.0, z0="manifold")
        assert run.rmse < 1e-4

    def test_zero_start_converges(self, oracle, harmonic):
        """Test that the transient dies out from z(0) = 0."""
        run = run_experiment(oracle, harmonic, 0.5, X0, duration=10.0, z0="zero")
        assert run.rmse > run.post_transient_rmse
        assert np.linalg.norm(run.estimates[-1] - run.true_trajectory.states[-1]) < 1e-4

    def test_noise_superposes(self, oracle, harmonic, design_half):
        """Test that a linear observer responds to noise additively."""
        truth = simulate_measurements(harmonic, X0, 5.0)
        noise = add_noise(np.zeros_like(truth.outputs), 0.2, seed=0)
        clean = estimate(oracle, design_half, truth.outputs, harmonic.dt)
        noisy = estimate(oracle, design_half, truth.outputs + noise, harmonic.dt)
        noise_only = estimate(oracle, design_half, noise, harmonic.dt)
        np.testing.assert_allclose(noisy.estimates - clean.estimates, noise_only.estimates, atol=1e-10)

    def test_rmse_definitions(self, oracle, harmonic):
        """Test the whole-horizon and post-transient RMSE."""
        run = run_experiment(oracle, harmonic, 0.5, X0, duration=5.0, sigma=0.1, seed=2)
        errors = np.linalg.norm(run.estimates - run.true_trajectory.states, axis=1)
        assert run.rmse == pytest.approx(np.sqrt(np.mean(errors**2)))
        mask = run.times > 0.3 * run.t_c
        assert run.post_transient_rmse == pytest.approx(np.sqrt(np.mean(errors[mask] ** 2)))
        assert run.noise_sigma == 0.1
        assert run.seed == 2

    def test_short_run_has_no_post_transient_rmse(self, oracle, harmonic, caplog):
        """Test the warning when the run ends inside the transient."""
        run = run_experiment(oracle, harmonic, 0.5, X0, duration=0.1)
        with caplog.at_level(logging.WARNING):
            assert np.isnan(run.post_transient_rmse)
        assert "undefined" in caplog.text

    def test_zero_order_hold(self, oracle, harmonic):
        """Test that a held output is a coarser but still convergent input."""
        linear = run_experiment(oracle, harmonic, 0.5, X0, duration=10.0, z0="manifold")
        held = run_experiment(oracle, harmonic, 0.5, X0, duration=10.0, z0="manifold", hold="zoh")
        assert linear.rmse < held.rmse < 0.05

    def test_non_finite_state(self, oracle, design_half):
        """Test EstimationError on a non-finite filter state."""
        measured = np.zeros((10, 1))
        measured[5, 0] = np.inf
        with pytest.raises(EstimationError) as exc_info:
            estimate(oracle, design_half, measured, 0.01)
        assert exc_info.value.step == 5
        assert exc_info.value.exit_code == 6

    def test_invalid_arguments(self, oracle, harmonic, design_half):
        """Test z0, x0 and hold validation."""
        with pytest.raises(InputError):
            run_experiment(oracle, harmonic, 0.5, X0, duration=1.0, z0="random")
        with pytest.raises(InputError):
            run_experiment(oracle, harmonic, 0.5, X0, duration=1.0, z0=np.zeros(2))
        with pytest.raises(InputError):
            run_experiment(oracle, harmonic, 0.5, np.zeros(3), duration=1.0)
        with pytest.raises(InputError):
            estimate(oracle, design_half, np.zeros((3, 1)), 0.01, hold="cubic")

    def test_csv_columns(self, oracle, harmonic, tmp_path):
        """Test the time-series export."""
        run = run_experiment(oracle, harmonic, 0.5, X0, duration=0.05)
        path = tmp_path / "run.csv"
        run.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "t,x1,x2,y_meas,z1,z2,z3,xhat1,xhat2"


class TestContraction:
    """Test the fitted decay rate of ||z - T(x)||."""

    def test_rate_matches_lambda_min(self, oracle, harmonic, design_half):
        """Test a slope of -lambda_min for an offset in the slowest mode."""
        z0 = oracle.encode(X0, 0.5) + np.array([0.0, 0.5, 0.0])
        fit = contraction_check(oracle, design_half, harmonic, X0, dt=1e-4, z0=z0)
        assert not fit.converged
        assert fit.slope == pytest.approx(-design_half.lambda_min, rel=0.02)
        assert fit.satisfies(0.9)
        assert fit.window[0] >= 5.0 / design_half.lambda_min

    def test_rate_scales_with_cutoff(self, oracle, harmonic):
        """Test that doubling omega_c roughly doubles the rate."""
        slopes = []
        for omega_c in (0.5, 1.0):
            design = oracle.design(omega_c)
            z0 = oracle.encode(X0, omega_c) + np.array([0.0, 0.5, 0.0])
            slopes.append(contraction_check(oracle, design, harmonic, X0, dt=1e-4, z0=z0).slope)
        assert 1.7 <= slopes[1] / slopes[0] <= 2.3

    def test_manifold_start_is_converged(self, oracle, harmonic, design_half):
        """Test that no fit is attempted when z(0) = T(x(0))."""
        fit = contraction_check(oracle, design_half, harmonic, X0, z0=oracle.encode(X0, 0.5))
        assert fit.converged
        assert fit.satisfies()


class TestHeatmap:
    """Test the reconstruction error grid."""

    def test_oracle_error_small(self, oracle, harmonic, design_half):
        """Test that the exact observer reconstructs the whole grid."""
        frame = error_heatmap(oracle, design_half, harmonic, n_grid=25)
        assert list(frame.columns) == ["x1", "x2", "error"]
        assert len(frame) == 25
        assert frame["error"].max() < 1e-3

    def test_single_point(self, oracle, harmonic, design_half):
        """Test one explicit point against a direct evaluation."""
        point = np.array([[0.3, -0.2]])
        frame = error_heatmap(oracle, design_half, harmonic, n_grid=1, points=point)
        _, z, _ = backward_forward(harmonic, design_half, point)
        expected = np.linalg.norm(point - oracle.decode(z, 0.5), axis=1)
        assert frame["error"].iloc[0] == expected[0]
