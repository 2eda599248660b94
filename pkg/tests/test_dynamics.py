"""Tests for dynamics module."""

import numpy as np
import pytest

from kkl_tune.dynamics import (
    Direction,
    SaturationSpec,
    Trajectory,
    eval_reverse_duffing,
    eval_van_der_pol,
    eval_van_der_pol_saturated,
    get_system,
    linear_system,
    rk4_step,
    simulate,
    step_count,
    sylvester_transform,
)
from kkl_tune.errors import BlowUpError, InputError
from kkl_tune.linfilter import build_design


class TestVectorFields:
    """Test the benchmark vector fields."""

    def test_reverse_duffing_value(self):
        """Test the reverse Duffing field at a known point."""
        np.testing.assert_array_equal(eval_reverse_duffing(np.array([1.0, 2.0])), [8.0, -1.0])

    def test_van_der_pol_value(self):
        """Test the Van der Pol field at a known point."""
        np.testing.assert_array_equal(eval_van_der_pol(np.array([1.0, 2.0])), [2.0, -1.0])

    def test_fields_vectorize_over_batch(self):
        """Test that a batch of states gives one row per state."""
        x = np.array([[1.0, 2.0], [0.5, -0.5], [0.0, 0.0]])
        out = eval_reverse_duffing(x)
        assert out.shape == (3, 2)
        np.testing.assert_array_equal(out[1], eval_reverse_duffing(x[1]))

    def test_equilibrium_at_origin(self):
        """Test that every benchmark vanishes at the origin."""
        zero = np.zeros(2)
        np.testing.assert_array_equal(eval_reverse_duffing(zero), zero)
        np.testing.assert_array_equal(eval_van_der_pol_saturated(zero), zero)


class TestSaturation:
    """Test the smooth radial cut-off."""

    def test_gain_inside_and_outside(self):
        """Test g = 1 inside radius r and g = 0 beyond r + d."""
        sat = SaturationSpec(r=3.0, d=7.0)
        assert sat.gain(np.array([1.0, 1.0])) == 1.0
        assert sat.gain(np.array([3.0, 0.0])) == 1.0
        assert sat.gain(np.array([10.0, 0.0])) == 0.0
        assert sat.gain(np.array([20.0, 5.0])) == 0.0

    def test_profile_is_c1_bridge(self):
        """Test that the cubic matches value and slope at both ends."""
        sat = SaturationSpec()
        assert sat.profile(0.0) == pytest.approx(1.0, abs=1e-15)
        assert sat.profile(sat.d) == pytest.approx(0.0, abs=1e-15)
        assert sat.profile_derivative(0.0) == pytest.approx(0.0, abs=1e-15)
        assert sat.profile_derivative(sat.d) == pytest.approx(0.0, abs=1e-15)

    def test_mid_band_halves_the_field(self):
        """Test that |x| = r + d/2 scales f by exactly one half."""
        x = np.array([6.5, 0.0])
        assert SaturationSpec().gain(x) == pytest.approx(0.5, abs=1e-15)
        np.testing.assert_allclose(eval_van_der_pol_saturated(x), 0.5 * eval_van_der_pol(x), rtol=1e-14)

    @pytest.mark.parametrize("knot", [3.0, 10.0])
    def test_gain_c1_across_knots(self, knot):
        """Test that g and its radial slope are continuous at r and r + d."""
        sat = SaturationSpec(r=3.0, d=7.0)
        eps = 1e-6

        def g(radius):
            return float(sat.gain(np.array([radius, 0.0])))

        assert g(knot - eps) == pytest.approx(g(knot + eps), abs=1e-9)
        left_slope = (g(knot - eps) - g(knot - 2 * eps)) / eps
        right_slope = (g(knot + 2 * eps) - g(knot + eps)) / eps
        assert abs(left_slope) < 1e-5
        assert abs(right_slope) < 1e-5

    def test_gain_monotone_in_band(self):
        """Test that g decreases across the transition band."""
        sat = SaturationSpec()
        radii = np.linspace(3.0, 10.0, 200)
        gains = sat.gain(np.stack([radii, np.zeros_like(radii)], axis=1))
        assert np.all(np.diff(gains) <= 1e-15)

    def test_saturated_matches_raw_inside_ball(self):
        """Test that saturation does not change f where |x| <= r."""
        rng = np.random.default_rng(0)
        x = rng.uniform(-2.7, 2.7, size=(500, 2))
        x = x[np.linalg.norm(x, axis=1) <= 3.0]
        np.testing.assert_array_equal(eval_van_der_pol_saturated(x), eval_van_der_pol(x))

    def test_invalid_radii(self):
        """Test that non-positive radii are rejected."""
        with pytest.raises(InputError):
            SaturationSpec(r=0.0, d=7.0)


class TestSystems:
    """Test the system registry."""

    @pytest.mark.parametrize("name", ["rev-duffing", "van-der-pol", "van-der-pol-raw", "harmonic"])
    def test_registry(self, name):
        """Test that every registered system is two-dimensional with scalar output."""
        system = get_system(name)
        assert system.name == name
        assert (system.d_x, system.d_y) == (2, 1)
        assert system.h(np.array([[0.3, 0.4]])).shape == (1, 1)

    def test_default_steps(self):
        """Test the per-system integration steps."""
        assert get_system("rev-duffing").dt == 1e-3
        assert get_system("van-der-pol").dt == 1e-2

    def test_domains(self):
        """Test the per-system domain boxes."""
        np.testing.assert_array_equal(get_system("rev-duffing").upper, [1.0, 1.0])
        np.testing.assert_array_equal(get_system("van-der-pol").lower, [-2.7, -2.7])

    def test_unknown_system(self):
        """Test that an unknown name raises InputError."""
        with pytest.raises(InputError, match="unknown system"):
            get_system("lorenz")

    def test_contains(self):
        """Test the domain membership test."""
        system = get_system("rev-duffing")
        assert system.contains(np.array([0.5, -0.5]))
        assert not system.contains(np.array([1.5, 0.0]))

    def test_degenerate_box(self):
        """Test that an empty domain box is rejected."""
        with pytest.raises(InputError):
            linear_system(np.eye(2), np.ones((1, 2)), [1.0, 0.0], [0.0, 1.0])

    def test_sylvester_transform(self, harmonic):
        """Test that the Sylvester solution satisfies T A = D T + F C."""
        A = np.array([[0.0, 1.0], [-1.0, 0.0]])
        C = np.array([[1.0, 0.0]])
        design = build_design(0.5, 2, 1)
        T = sylvester_transform(A, C, design.D, design.F)
        residual = T @ A - design.D @ T - design.F @ C
        assert np.max(np.abs(residual)) < 1e-10
        assert np.linalg.matrix_rank(T) == 2


class TestIntegration:
    """Test the fixed-step integrator."""

    def test_rk4_forward_matches_exact_solution(self, harmonic):
        """Test RK4 on the harmonic oscillator against cos/sin."""
        traj = simulate(harmonic.f, np.array([1.0, 0.0]), 2.0, 1e-3)
        exact = np.stack([np.cos(traj.times), -np.sin(traj.times)], axis=1)
        assert np.max(np.abs(traj.states - exact)) < 1e-10

    def test_rk4_backward(self, harmonic):
        """Test that backward integration runs on negative times."""
        traj = simulate(harmonic.f, np.array([1.0, 0.0]), 1.0, 1e-3, direction=Direction.BACKWARD)
        assert traj.times[-1] == pytest.approx(-1.0)
        exact = np.stack([np.cos(traj.times), -np.sin(traj.times)], axis=1)
        assert np.max(np.abs(traj.states - exact)) < 1e-10

    def test_rk4_step_on_exponential_decay(self):
        """Test one step of x' = -x forward and backward."""
        assert rk4_step(lambda x: -x, np.array([1.0]), 0.1)[0] == pytest.approx(0.9048375, abs=1e-7)
        assert rk4_step(lambda x: -x, np.array([1.0]), -0.1)[0] == pytest.approx(1.105171, abs=1e-6)
        assert rk4_step(lambda x: -x, np.array([1.0]), 0.1)[0] == pytest.approx(np.exp(-0.1), abs=1e-7)

    def test_rk4_is_fourth_order(self):
        """Test that halving dt divides the global error by about 16."""

        def error(dt):
            traj = simulate(lambda x: -x, np.array([1.0]), 1.0, dt)
            return abs(traj.states[-1, 0] - np.exp(-1.0))

        ratio = error(0.1) / error(0.05)
        assert 14.0 < ratio < 18.0

    @pytest.mark.parametrize("name", ["rev-duffing", "van-der-pol"])
    def test_forward_then_backward_returns_to_start(self, name):
        """Test that integrating back over the same horizon inverts the flow."""
        system = get_system(name)
        x0 = np.array([[0.6, 0.6], [-0.8, 0.3], [0.2, -0.9]])
        forward = simulate(system.f, x0, 10.0, system.dt)
        backward = simulate(system.f, forward.states[-1], 10.0, system.dt, direction="backward")
        assert np.max(np.abs(backward.states[-1] - x0)) < 1e-6

    def test_batch_simulation(self, harmonic):
        """Test that a batch of initial states integrates in one pass."""
        x0 = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        traj = simulate(harmonic.f, x0, 0.5, 1e-2)
        assert traj.states.shape == (51, 3, 2)
        single = simulate(harmonic.f, x0[2], 0.5, 1e-2)
        np.testing.assert_allclose(traj.states[:, 2], single.states, rtol=0, atol=1e-12)

    def test_outputs_recorded(self, harmonic):
        """Test that outputs are evaluated along the trajectory."""
        traj = simulate(harmonic.f, np.array([1.0, 0.0]), 0.1, 1e-2, h=harmonic.h)
        np.testing.assert_array_equal(traj.outputs[:, 0], traj.states[:, 0])

    def test_step_count_rounds_representation_error(self):
        """Test that 1.0 / 0.1 counts as ten steps."""
        assert step_count(1.0, 0.1) == 10
        assert step_count(1.05, 0.1) == 11

    def test_zero_step_rejected(self, harmonic):
        """Test that dt = 0 is rejected."""
        with pytest.raises(InputError):
            rk4_step(harmonic.f, np.zeros(2), 0.0)

    def test_non_finite_stage_raises(self):
        """Test that a non-finite derivative names the RK4 stage."""
        with pytest.raises(BlowUpError) as exc_info:
            rk4_step(lambda x: np.full_like(x, np.nan), np.zeros(2), 0.1)
        assert exc_info.value.stage == 1

    def test_raw_van_der_pol_blows_up_backward(self):
        """Test that the unsaturated Van der Pol escapes in backward time."""
        system = get_system("van-der-pol-raw")
        with pytest.raises(BlowUpError, match="saturate"):
            simulate(system.f, np.array([2.5, 2.5]), 20.0, system.dt, direction="backward")

    def test_saturated_van_der_pol_stays_bounded_backward(self):
        """Test that the saturated Van der Pol stays bounded in backward time."""
        system = get_system("van-der-pol")
        traj = simulate(system.f, np.array([2.5, 2.5]), 20.0, system.dt, direction="backward")
        assert np.all(np.isfinite(traj.states))
        assert np.max(np.linalg.norm(traj.states, axis=1)) < 11.0


class TestTrajectory:
    """Test Trajectory export."""

    def test_to_frame_columns(self):
        """Test the tabular layout."""
        traj = Trajectory(
            times=np.array([0.0, 0.1]),
            states=np.array([[1.0, 2.0], [3.0, 4.0]]),
            outputs=np.array([[1.0], [3.0]]),
        )
        frame = traj.to_frame()
        assert list(frame.columns) == ["t", "x1", "x2", "y1"]
        assert traj.dt == pytest.approx(0.1)

    def test_to_csv(self, tmp_path):
        """Test writing a trajectory CSV."""
        traj = Trajectory(times=np.array([0.0, 0.1]), states=np.array([[1.0, 2.0], [3.0, 4.0]]))
        path = tmp_path / "sub" / "traj.csv"
        traj.to_csv(path)
        assert path.read_text().splitlines()[0] == "t,x1,x2"

    def test_length_mismatch(self):
        """Test that times and states must align."""
        with pytest.raises(InputError):
            Trajectory(times=np.zeros(3), states=np.zeros((2, 2)))
