"""Benchmark autonomous systems and a fixed-step RK4 integrator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd
from scipy import linalg

from .errors import BlowUpError, InputError, SATURATION_ADVICE

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray], np.ndarray]

DEFAULT_BLOWUP_BOUND = 1e6


class Direction(str, Enum):
    """Integration direction."""

    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class SaturationSpec:
    """Smooth radial cut-off g of the state-space vector field.

    g(x) = 1 inside the ball of radius r, 0 outside radius r + d, and the
    Hermite cubic p(|x| - r) in between.
    """

    r: float = 3.0
    d: float = 7.0

    def __post_init__(self) -> None:
        if not (self.r > 0 and self.d > 0):
            raise InputError(f"saturation radii must be positive, got r={self.r}, d={self.d}")

    def profile(self, s: np.ndarray) -> np.ndarray:
        """p(s) = 1 - 3(s/d)^2 + 2(s/d)^3, the unique C1 cubic bridge."""
        u = np.asarray(s, dtype=float) / self.d
        return 1.0 - 3.0 * u**2 + 2.0 * u**3

    def profile_derivative(self, s: np.ndarray) -> np.ndarray:
        u = np.asarray(s, dtype=float) / self.d
        return (-6.0 * u + 6.0 * u**2) / self.d

    def gain(self, x: np.ndarray) -> np.ndarray:
        """g(x) evaluated over the last axis of x."""
        radius = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return np.where(
            radius <= self.r,
            1.0,
            np.where(radius >= self.r + self.d, 0.0, self.profile(radius - self.r)),
        )


@dataclass
class SystemModel:
    """Autonomous plant x' = f(x), y = h(x) with a compact domain of interest."""

    name: str
    d_x: int
    d_y: int
    f: VectorField
    h: VectorField
    lower: np.ndarray
    upper: np.ndarray
    dt: float = 1e-2

    def __post_init__(self) -> None:
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.d_x < 1 or self.d_y < 1:
            raise InputError(f"dimensions must be positive, got d_x={self.d_x}, d_y={self.d_y}")
        if self.lower.shape != (self.d_x,) or self.upper.shape != (self.d_x,):
            raise InputError(f"domain bounds must have length {self.d_x}")
        if np.any(self.lower >= self.upper):
            raise InputError(f"degenerate domain box {self.lower} .. {self.upper}")

    @property
    def domain(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower, self.upper

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)


@dataclass
class Trajectory:
    """Discretized solution on a constant-step time grid."""

    times: np.ndarray
    states: np.ndarray
    outputs: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if len(self.times) != len(self.states):
            raise InputError(
                f"times ({len(self.times)}) and states ({len(self.states)}) differ in length"
            )

    @property
    def dt(self) -> float:
        return float(abs(self.times[1] - self.times[0])) if len(self.times) > 1 else 0.0

    def to_frame(self) -> pd.DataFrame:
        """Tabular form with columns t, x1..xdx[, y1..ydy]."""
        states = np.asarray(self.states)
        data = {"t": self.times}
        for i in range(states.shape[-1]):
            data[f"x{i + 1}"] = states[:, i]
        if self.outputs is not None:
            outputs = np.asarray(self.outputs)
            for i in range(outputs.shape[-1]):
                data[f"y{i + 1}"] = outputs[:, i]
        return pd.DataFrame(data)

    def to_csv(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        logger.info(f"Saved trajectory with {len(self.times)} steps to {path}")


# Benchmark fields. All accept a leading batch axis.

def eval_reverse_duffing(x: np.ndarray) -> np.ndarray:
    """Reverse Duffing oscillator: (x2^3, -x1)."""
    x = np.asarray(x, dtype=float)
    return np.stack([x[..., 1] ** 3, -x[..., 0]], axis=-1)


def eval_van_der_pol(x: np.ndarray) -> np.ndarray:
    """Autonomous Van der Pol oscillator; blows up in finite backward time."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, (1.0 - x1**2) * x2 - x1], axis=-1)


def eval_van_der_pol_saturated(
    x: np.ndarray, sat: SaturationSpec = SaturationSpec()
) -> np.ndarray:
    """Van der Pol field multiplied by the smooth radial cut-off g."""
    x = np.asarray(x, dtype=float)
    return eval_van_der_pol(x) * sat.gain(x)[..., None]


def first_state_output(x: np.ndarray) -> np.ndarray:
    """y = x1."""
    x = np.asarray(x, dtype=float)
    return x[..., :1]


def linear_system(
    A: np.ndarray,
    C: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    name: str = "linear",
    dt: float = 1e-3,
) -> SystemModel:
    """Autonomous linear plant x' = A x, y = C x."""
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    return SystemModel(
        name=name,
        d_x=A.shape[0],
        d_y=C.shape[0],
        f=lambda x: np.asarray(x, dtype=float) @ A.T,
        h=lambda x: np.asarray(x, dtype=float) @ C.T,
        lower=lower,
        upper=upper,
        dt=dt,
    )


def sylvester_transform(A: np.ndarray, C: np.ndarray, D: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Exact T for a linear plant: T A = D T + F C.

    The map is linear, z = T x, and T* is its left inverse.
    """
    T = linalg.solve_sylvester(-np.asarray(D, dtype=float), np.asarray(A, dtype=float), F @ C)
    if np.linalg.matrix_rank(T) < T.shape[1]:
        logger.warning("Sylvester solution is not injective; (A, C) may be unobservable")
    return T


HARMONIC_A = np.array([[0.0, 1.0], [-1.0, 0.0]])
HARMONIC_C = np.array([[1.0, 0.0]])

SYSTEM_NAMES = ("rev-duffing", "van-der-pol", "van-der-pol-raw", "harmonic")


def get_system(name: str, saturation: Optional[SaturationSpec] = None) -> SystemModel:
    """Look up a benchmark system by name."""
    if name == "rev-duffing":
        return SystemModel(
            name=name, d_x=2, d_y=1,
            f=eval_reverse_duffing, h=first_state_output,
            lower=[-1.0, -1.0], upper=[1.0, 1.0], dt=1e-3,
        )
    if name == "van-der-pol":
        sat = saturation or SaturationSpec()
        return SystemModel(
            name=name, d_x=2, d_y=1,
            f=lambda x: eval_van_der_pol_saturated(x, sat), h=first_state_output,
            lower=[-2.7, -2.7], upper=[2.7, 2.7], dt=1e-2,
        )
    if name == "van-der-pol-raw":
        return SystemModel(
            name=name, d_x=2, d_y=1,
            f=eval_van_der_pol, h=first_state_output,
            lower=[-2.7, -2.7], upper=[2.7, 2.7], dt=1e-2,
        )
    if name == "harmonic":
        return linear_system(HARMONIC_A, HARMONIC_C, [-1.0, -1.0], [1.0, 1.0], name=name)
    raise InputError(f"unknown system '{name}', expected one of {', '.join(SYSTEM_NAMES)}")


# Integration

def _check_stage(k: np.ndarray, stage: int) -> None:
    if not np.all(np.isfinite(k)):
        raise BlowUpError(f"non-finite derivative in RK4 stage {stage}", stage=stage)


def rk4_step(f: VectorField, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step; negative dt integrates backward."""
    if dt == 0:
        raise InputError("dt must be non-zero")
    x = np.asarray(x, dtype=float)
    k1 = f(x)
    _check_stage(k1, 1)
    k2 = f(x + 0.5 * dt * k1)
    _check_stage(k2, 2)
    k3 = f(x + 0.5 * dt * k2)
    _check_stage(k3, 3)
    k4 = f(x + dt * k3)
    _check_stage(k4, 4)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_count(duration: float, dt: float) -> int:
    """Number of dt steps covering duration, rounding up."""
    if duration <= 0 or dt <= 0:
        raise InputError(f"duration and dt must be positive, got {duration}, {dt}")
    # tolerate representation error in duration/dt before rounding up
    return max(1, math.ceil(round(duration / dt, 9)))


def simulate(
    f: VectorField,
    x0: np.ndarray,
    duration: float,
    dt: float,
    direction: Union[Direction, str] = Direction.FORWARD,
    bound: float = DEFAULT_BLOWUP_BOUND,
    h: Optional[VectorField] = None,
) -> Trajectory:
    """Integrate x' = f(x) from x0 on a fixed grid.

    x0 may carry a leading batch axis; states then have shape
    (steps + 1, batch, d_x). The horizon is rounded up to a whole number of
    steps and the actual horizon is the last entry of ``times``.
    """
    direction = Direction(direction)
    n_steps = step_count(duration, dt)
    signed_dt = dt if direction is Direction.FORWARD else -dt

    x = np.asarray(x0, dtype=float)
    states = np.empty((n_steps + 1,) + x.shape)
    states[0] = x
    for k in range(1, n_steps + 1):
        try:
            x = rk4_step(f, x, signed_dt)
        except BlowUpError as e:
            raise BlowUpError(f"{e} at step {k}; {SATURATION_ADVICE}", stage=e.stage, step=k) from e
        if np.max(np.linalg.norm(x, axis=-1)) > bound:
            raise BlowUpError(
                f"state norm exceeded {bound:g} at step {k} ({direction.value}); {SATURATION_ADVICE}",
                step=k,
                point=np.asarray(x0).tolist(),
            )
        states[k] = x

    times = signed_dt * np.arange(n_steps + 1)
    outputs = h(states) if h is not None else None
    logger.debug(f"Simulated {n_steps} steps {direction.value} with dt={dt:g}")
    return Trajectory(times=times, states=states, outputs=outputs)
