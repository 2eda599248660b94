"""Running a learned observer on measurements and measuring how well it does."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from .dynamics import SystemModel, Trajectory, simulate
from .errors import EstimationError, InputError
from .learning import StateObserver
from .linfilter import FilterDesign
from .sampling import backward_forward, convergence_time, uniform_grid, write_sidecar

logger = logging.getLogger(__name__)

EXTRAPOLATION_X0 = (1.5, 1.5)
CONVERGED_FLOOR = 1e-12
# fraction of t_c after which an estimate counts as past the transient
TRANSIENT_FRACTION = 0.3

Z0Spec = Union[None, str, np.ndarray]


@dataclass
class EstimationRun:
    """Filter states and estimates on the measurement time grid."""

    times: np.ndarray
    measured: np.ndarray
    z: np.ndarray
    estimates: np.ndarray
    omega_c: float
    t_c: float
    noise_sigma: float = 0.0
    seed: Optional[int] = None
    true_trajectory: Optional[Trajectory] = None

    def _errors(self) -> np.ndarray:
        if self.true_trajectory is None:
            raise InputError("run has no true trajectory to compare against")
        return np.linalg.norm(self.estimates - self.true_trajectory.states, axis=1)

    @property
    def rmse(self) -> float:
        """sqrt of the time-mean of ||xhat - x||^2 over the whole horizon."""
        return float(np.sqrt(np.mean(self._errors() ** 2)))

    @property
    def post_transient_rmse(self) -> float:
        mask = self.times > TRANSIENT_FRACTION * self.t_c
        if not mask.any():
            logger.warning("Run ends before the transient window; post-transient RMSE undefined")
            return float("nan")
        return float(np.sqrt(np.mean(self._errors()[mask] ** 2)))

    def to_frame(self) -> pd.DataFrame:
        data = {"t": self.times}
        if self.true_trajectory is not None:
            for i in range(self.true_trajectory.states.shape[1]):
                data[f"x{i + 1}"] = self.true_trajectory.states[:, i]
        if self.measured.shape[1] == 1:
            data["y_meas"] = self.measured[:, 0]
        else:
            for i in range(self.measured.shape[1]):
                data[f"y_meas{i + 1}"] = self.measured[:, i]
        for i in range(self.z.shape[1]):
            data[f"z{i + 1}"] = self.z[:, i]
        for i in range(self.estimates.shape[1]):
            data[f"xhat{i + 1}"] = self.estimates[:, i]
        return pd.DataFrame(data)

    def to_csv(self, path: Union[str, Path], meta: Optional[Dict[str, Any]] = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        record = {
            "omega_c": float(self.omega_c),
            "t_c": float(self.t_c),
            "noise_sigma": float(self.noise_sigma),
            "seed": self.seed,
        }
        write_sidecar(path, {**record, **(meta or {})})
        logger.info(f"Saved estimation run to {path}")


def add_noise(outputs: np.ndarray, sigma: float, seed: Optional[int]) -> np.ndarray:
    """Outputs plus i.i.d. N(0, sigma^2) per sample and component."""
    if sigma < 0:
        raise InputError(f"noise sigma must be >= 0, got {sigma}")
    outputs = np.asarray(outputs, dtype=float)
    if sigma == 0:
        return outputs.copy()
    rng = np.random.default_rng(seed)
    return outputs + rng.normal(0.0, sigma, size=outputs.shape)


def simulate_measurements(
    system: SystemModel, x0: np.ndarray, duration: float, dt: Optional[float] = None
) -> Trajectory:
    """True trajectory from x0 with its noiseless outputs."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.d_x,):
        raise InputError(f"x0 must have length {system.d_x}, got shape {x0.shape}")
    return simulate(system.f, x0, duration, dt or system.dt, h=system.h)


def estimate(
    observer: StateObserver,
    design: FilterDesign,
    measured: np.ndarray,
    dt: float,
    z0: Optional[np.ndarray] = None,
    hold: str = "linear",
) -> EstimationRun:
    """Filter z' = D z + F y over the samples and decode every state.

    Between samples y is interpolated linearly, or held (``hold="zoh"``).
    """
    measured = np.asarray(measured, dtype=float)
    if measured.ndim == 1:
        measured = measured[:, None]
    if hold not in ("linear", "zoh"):
        raise InputError(f"unknown hold '{hold}'")
    z = np.zeros(design.d_z) if z0 is None else np.asarray(z0, dtype=float).copy()
    D, F = design.D, design.F

    def field_(z_: np.ndarray, y_: np.ndarray) -> np.ndarray:
        return D @ z_ + F @ y_

    states = np.empty((len(measured), design.d_z))
    states[0] = z
    for k in range(len(measured) - 1):
        y0, y1 = measured[k], measured[k + 1]
        y_mid, y_end = (0.5 * (y0 + y1), y1) if hold == "linear" else (y0, y0)
        k1 = field_(z, y0)
        k2 = field_(z + 0.5 * dt * k1, y_mid)
        k3 = field_(z + 0.5 * dt * k2, y_mid)
        k4 = field_(z + dt * k3, y_end)
        z = z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise EstimationError(step=k + 1, time=(k + 1) * dt)
        states[k + 1] = z

    estimates = observer.decode(states, design.omega_c)
    return EstimationRun(
        times=dt * np.arange(len(measured)),
        measured=measured,
        z=states,
        estimates=estimates,
        omega_c=design.omega_c,
        t_c=convergence_time(design),
    )


def _initial_filter_state(
    observer: StateObserver, design: FilterDesign, x0: np.ndarray, z0: Z0Spec
) -> Optional[np.ndarray]:
    if z0 is None or (isinstance(z0, str) and z0 == "zero"):
        return None
    if isinstance(z0, str):
        if z0 != "manifold":
            raise InputError(f"unknown z0 '{z0}', expected 'zero', 'manifold' or a vector")
        return observer.encode(x0, design.omega_c)
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (design.d_z,):
        raise InputError(f"z0 must have length {design.d_z}, got shape {z0.shape}")
    return z0


def run_experiment(
    observer: StateObserver,
    system: SystemModel,
    omega_c: float,
    x0: np.ndarray,
    duration: float,
    sigma: float = 0.0,
    seed: Optional[int] = None,
    dt: Optional[float] = None,
    z0: Z0Spec = None,
    hold: str = "linear",
) -> EstimationRun:
    """Simulate, corrupt the outputs, filter and decode.

    ``z0="manifold"`` starts the filter at T(x(0), omega_c), which removes
    the transient.
    """
    dt = dt or system.dt
    x0 = np.asarray(x0, dtype=float)
    design = observer.design(omega_c)
    truth = simulate_measurements(system, x0, duration, dt)
    measured = add_noise(truth.outputs, sigma, seed)
    run = estimate(observer, design, measured, dt, _initial_filter_state(observer, design, x0, z0), hold)
    run.true_trajectory = truth
    run.noise_sigma = float(sigma)
    run.seed = seed
    logger.info(
        f"omega_c={omega_c:.4g}, sigma={sigma:g}: RMSE {run.rmse:.4f} "
        f"(post-transient {run.post_transient_rmse:.4f})"
    )
    return run


@dataclass
class ContractionFit:
    """Decay of ||z(t) - T(x(t))|| fitted on log scale."""

    slope: Optional[float]
    lambda_min: float
    window: tuple[float, float]

    @property
    def converged(self) -> bool:
        return self.slope is None

    def satisfies(self, factor: float = 0.9) -> bool:
        return self.converged or self.slope <= -factor * self.lambda_min


def contraction_check(
    observer: StateObserver,
    design: FilterDesign,
    system: SystemModel,
    x0: np.ndarray,
    duration: Optional[float] = None,
    dt: Optional[float] = None,
    z0: Optional[np.ndarray] = None,
) -> ContractionFit:
    """Least-squares slope of log ||z(t) - T(x(t))|| over the transient.

    The fit starts after the faster modes have died out (t >= 5/lambda_min)
    and stops where the error reaches the approximation floor, taken as three
    times the median error over the last fifth of the run.
    """
    dt = dt or system.dt
    duration = duration or 2.0 * convergence_time(design)
    x0 = np.asarray(x0, dtype=float)
    truth = simulate_measurements(system, x0, duration, dt)
    run = estimate(observer, design, truth.outputs, dt, z0)
    errors = np.linalg.norm(run.z - observer.encode(truth.states, design.omega_c), axis=1)
    times = run.times

    if errors[0] < CONVERGED_FLOOR:
        logger.info("Filter started on the manifold; nothing to fit")
        return ContractionFit(None, design.lambda_min, (0.0, 0.0))

    tail = errors[int(0.8 * len(errors)) :]
    plateau = float(np.median(tail))
    above = errors > max(3.0 * plateau, CONVERGED_FLOOR)
    mask = above & (times >= 5.0 / design.lambda_min)
    if mask.sum() < 10:
        mask = above
    if mask.sum() < 10:
        logger.info("Error reached its floor before a fit window opened")
        return ContractionFit(None, design.lambda_min, (0.0, 0.0))

    slope, _ = np.polyfit(times[mask], np.log(errors[mask]), 1)
    fit = ContractionFit(float(slope), design.lambda_min, (float(times[mask][0]), float(times[mask][-1])))
    logger.info(f"Fitted decay rate {slope:.4f} vs -lambda_min = {-design.lambda_min:.4f}")
    return fit


def error_heatmap(
    observer: StateObserver,
    design: FilterDesign,
    system: SystemModel,
    n_grid: int,
    dt: Optional[float] = None,
    points: Optional[np.ndarray] = None,
) -> pd.DataFrame:
    """||x - T*(z)|| on a uniform grid, z paired by backward-forward sampling."""
    x = uniform_grid(n_grid, system.lower, system.upper) if points is None else np.atleast_2d(points)
    _, z, _ = backward_forward(system, design, x, dt=dt)
    errors = np.linalg.norm(x - observer.decode(z, design.omega_c), axis=1)
    frame = pd.DataFrame({f"x{i + 1}": x[:, i] for i in range(x.shape[1])})
    frame["error"] = errors
    logger.info(
        f"Heatmap at omega_c={design.omega_c:.4g}: median error {np.median(errors):.4e}, "
        f"max {errors.max():.4e}"
    )
    return frame
