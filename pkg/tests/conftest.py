"""Shared fixtures: the harmonic oscillator and its exact Sylvester observer."""

from functools import lru_cache

import numpy as np
import pytest

from kkl_tune.config import ExperimentConfig
from kkl_tune.dynamics import HARMONIC_A, HARMONIC_C, get_system, sylvester_transform
from kkl_tune.learning import TrainingSettings
from kkl_tune.linfilter import FilterDesign, build_design


class LinearOracle:
    """Observer built from the exact linear T of x' = A x, y = C x."""

    def __init__(self, A=HARMONIC_A, C=HARMONIC_C):
        self.A = np.asarray(A, dtype=float)
        self.C = np.asarray(C, dtype=float)
        self.d_x = self.A.shape[0]
        self.d_y = self.C.shape[0]
        self._transform = lru_cache(maxsize=None)(self._solve)

    def _solve(self, omega_c: float) -> np.ndarray:
        design = self.design(omega_c)
        return sylvester_transform(self.A, self.C, design.D, design.F)

    def design(self, omega_c: float) -> FilterDesign:
        return build_design(omega_c, self.d_x, self.d_y)

    def T(self, omega_c: float) -> np.ndarray:
        return self._transform(float(omega_c))

    def T_inv(self, omega_c: float) -> np.ndarray:
        return np.linalg.pinv(self.T(omega_c))

    def encode(self, x, omega_c):
        return np.asarray(x, dtype=float) @ self.T(omega_c).T

    def decode(self, z, omega_c):
        return np.asarray(z, dtype=float) @ self.T_inv(omega_c).T

    def decoder_jacobian(self, z, omega_c):
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            return self.T_inv(omega_c)
        return np.broadcast_to(self.T_inv(omega_c), (len(z), self.d_x, self.T(omega_c).shape[0])).copy()


@pytest.fixture
def harmonic():
    """Linear oscillator x1' = x2, x2' = -x1 with y = x1."""
    return get_system("harmonic")


@pytest.fixture
def duffing():
    return get_system("rev-duffing")


@pytest.fixture
def oracle():
    return LinearOracle()


@pytest.fixture
def design_half():
    """Third-order Bessel design at omega_c = 0.5."""
    return build_design(0.5, 2, 1)


@pytest.fixture
def tiny_settings():
    """Small networks and few epochs so training tests stay fast."""
    return TrainingSettings(
        hidden_sizes=(8, 8),
        learning_rate=1e-2,
        batch_size=64,
        epochs=5,
        validation_split=0.0,
        patience=100,
        show_progress=False,
    )


SMALL_EXPERIMENT = {
    "system": {"name": "harmonic"},
    "sampler": {"n": 40, "seed": 0},
    "omega_grid": {"min": 0.3, "max": 0.6, "count": 2},
    "network": {"hidden_sizes": [8, 8]},
    "trainer": {"epochs": 3, "batch_size": 32, "learning_rate": 1e-2, "autoencoder_samples": 100},
    "evaluation": {"duration": 2.0, "n_test": 9, "heatmap_points": 9},
}


@pytest.fixture
def small_config():
    """Harmonic experiment small enough to run every stage in a test."""
    return ExperimentConfig.from_dict(SMALL_EXPERIMENT)


@pytest.fixture
def small_config_file(tmp_path, small_config):
    path = tmp_path / "small.toml"
    path.write_text(small_config.to_toml())
    return path
