"""Training data for the observer maps via backward-forward sampling."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .dynamics import DEFAULT_BLOWUP_BOUND, SystemModel, rk4_step, step_count
from .errors import BlowUpError, InputError, SATURATION_ADVICE
from .linfilter import FilterDesign, build_design

logger = logging.getLogger(__name__)

ROUNDTRIP_TOL = 1e-5
CONVERGENCE_FACTOR = 10.0


def write_sidecar(path: Union[str, Path], meta: Dict[str, Any]) -> Path:
    """JSON record next to a CSV artifact: same stem, .json suffix."""
    meta_path = Path(path).with_suffix(".json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return meta_path


def read_sidecar(path: Union[str, Path]) -> Dict[str, Any]:
    meta_path = Path(path).with_suffix(".json")
    return json.loads(meta_path.read_text()) if meta_path.exists() else {}


@dataclass
class TrainingPair:
    """One (x, z) sample generated under a given omega_c."""

    x: np.ndarray
    z: np.ndarray
    omega_c: float


@dataclass
class Dataset:
    """Concatenated (omega_c, x, z) samples plus the generation record."""

    frame: pd.DataFrame
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def x_columns(self) -> List[str]:
        return [c for c in self.frame.columns if c.startswith("x")]

    @property
    def z_columns(self) -> List[str]:
        return [c for c in self.frame.columns if c.startswith("z")]

    @property
    def omegas(self) -> np.ndarray:
        return np.sort(self.frame["omega_c"].unique())

    def __len__(self) -> int:
        return len(self.frame)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(x, z, omega_c) as float arrays."""
        return (
            self.frame[self.x_columns].to_numpy(dtype=float),
            self.frame[self.z_columns].to_numpy(dtype=float),
            self.frame["omega_c"].to_numpy(dtype=float),
        )

    def at_omega(self, omega_c: float) -> "Dataset":
        mask = np.isclose(self.frame["omega_c"].to_numpy(), omega_c, rtol=1e-12, atol=0.0)
        if not mask.any():
            raise InputError(f"dataset has no pairs at omega_c={omega_c}")
        return Dataset(self.frame.loc[mask].reset_index(drop=True), dict(self.meta))

    def pairs(self) -> Iterator[TrainingPair]:
        x, z, w = self.arrays()
        for i in range(len(w)):
            yield TrainingPair(x=x[i], z=z[i], omega_c=float(w[i]))

    def to_csv(self, path: Union[str, Path]) -> Path:
        """Write the CSV and a JSON sidecar holding the meta record."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame.to_csv(path, index=False, float_format="%.17g")
        meta_path = write_sidecar(path, self.meta)
        logger.info(f"Saved {len(self.frame)} pairs to {path} (meta: {meta_path})")
        return meta_path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "Dataset":
        path = Path(path)
        frame = pd.read_csv(path, dtype=float, float_precision="round_trip")
        logger.info(f"Loaded {len(frame)} pairs from {path}")
        return cls(frame=frame, meta=read_sidecar(path))


def lhs(n: int, lower: np.ndarray, upper: np.ndarray, seed: int) -> np.ndarray:
    """Plain Latin hypercube sample of n points in the box.

    Each axis is cut into n equal strata holding exactly one point, jittered
    uniformly inside its stratum; axes are coupled by random permutations.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if n < 1:
        raise InputError(f"sample count must be >= 1, got {n}")
    if lower.shape != upper.shape or np.any(lower >= upper):
        raise InputError(f"degenerate sampling box {lower} .. {upper}")
    rng = np.random.default_rng(seed)
    d = lower.shape[0]
    strata = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    unit = (strata + rng.random((n, d))) / n
    return lower + unit * (upper - lower)


def uniform_grid(n: int, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Regular tensor grid with about n points (round(n ** (1/d)) per axis)."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if n < 1:
        raise InputError(f"grid size must be >= 1, got {n}")
    per_axis = max(1, int(round(n ** (1.0 / lower.shape[0]))))
    if per_axis == 1:
        return (0.5 * (lower + upper))[None, :]
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def omega_grid(
    minimum: float, maximum: float, count: int, spacing: str = "log"
) -> np.ndarray:
    if count < 1 or minimum <= 0 or maximum < minimum:
        raise InputError(f"invalid omega grid [{minimum}, {maximum}] x {count}")
    if count == 1:
        return np.array([float(minimum)])
    if spacing == "log":
        return np.geomspace(minimum, maximum, count)
    if spacing == "linear":
        return np.linspace(minimum, maximum, count)
    raise InputError(f"unknown omega spacing '{spacing}'")


def convergence_time(design: FilterDesign) -> float:
    """t_c = 10 / lambda_min."""
    return CONVERGENCE_FACTOR / design.lambda_min


def _observer_field(system: SystemModel, design: FilterDesign):
    d_x = system.d_x

    def field_(state: np.ndarray) -> np.ndarray:
        x, z = state[..., :d_x], state[..., d_x:]
        return np.concatenate(
            [system.f(x), z @ design.D.T + system.h(x) @ design.F.T], axis=-1
        )

    return field_


def _step_fails(f, row: np.ndarray, dt: float) -> bool:
    try:
        rk4_step(f, row[None, :], dt)
    except BlowUpError:
        return True
    return False


def backward_forward(
    system: SystemModel,
    design: FilterDesign,
    x_points: np.ndarray,
    dt: Optional[float] = None,
    z0: Optional[np.ndarray] = None,
    bound: float = DEFAULT_BLOWUP_BOUND,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pair each x_i(0) with the converged filter state z_i(0).

    x is integrated backward for t_c, then (x, z) forward for t_c from
    z(-t_c) = z0, so z has forgotten z0 when x is back on the requested grid.
    Returns (x_roundtrip, z, roundtrip_error).
    """
    x_points = np.atleast_2d(np.asarray(x_points, dtype=float))
    dt = dt or system.dt
    n_steps = step_count(convergence_time(design), dt)
    z_init = np.zeros(design.d_z) if z0 is None else np.asarray(z0, dtype=float)

    x = x_points.copy()
    for k in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                x = rk4_step(system.f, x, -dt)
            except BlowUpError:
                flags = np.array([_step_fails(system.f, row, -dt) for row in x])
                if not flags.any():
                    flags[:] = True
                x = np.where(flags[:, None], np.inf, x)
        radius = np.linalg.norm(x, axis=-1)
        bad = ~np.isfinite(radius) | (radius > bound)
        if bad.any():
            culprit = x_points[int(np.argmax(bad))]
            raise BlowUpError(
                f"backward simulation from x={culprit.tolist()} exceeded {bound:g} "
                f"after {k + 1} steps; {SATURATION_ADVICE}",
                step=k + 1,
                point=culprit.tolist(),
            )

    state = np.concatenate([x, np.broadcast_to(z_init, (len(x), design.d_z))], axis=1)
    field_ = _observer_field(system, design)
    for _ in range(n_steps):
        state = rk4_step(field_, state, dt)

    x_back, z = state[:, : system.d_x], state[:, system.d_x :]
    error = np.linalg.norm(x_back - x_points, axis=1)
    worst = float(error.max())
    if worst > ROUNDTRIP_TOL:
        logger.warning(
            f"Roundtrip error {worst:.2e} exceeds {ROUNDTRIP_TOL:g} at omega_c={design.omega_c:.4g}"
        )
    else:
        logger.debug(f"Max roundtrip error {worst:.2e} at omega_c={design.omega_c:.4g}")
    return x_back, z, error


def _pairs_frame(omega_c: float, x: np.ndarray, z: np.ndarray) -> pd.DataFrame:
    data: Dict[str, Any] = {"omega_c": np.full(len(x), omega_c)}
    for i in range(x.shape[1]):
        data[f"x{i + 1}"] = x[:, i]
    for i in range(z.shape[1]):
        data[f"z{i + 1}"] = z[:, i]
    return pd.DataFrame(data)


def sample_points(
    method: str, n: int, lower: np.ndarray, upper: np.ndarray, seed: int
) -> np.ndarray:
    if method == "lhs":
        return lhs(n, lower, upper, seed)
    if method == "uniform":
        return uniform_grid(n, lower, upper)
    raise InputError(f"unknown sampler '{method}'")


def generate_dataset(
    system: SystemModel,
    omegas: Sequence[float],
    n: int,
    seed: int,
    dt: Optional[float] = None,
    method: str = "lhs",
    z0: Optional[np.ndarray] = None,
    threads: int = 1,
    extra_meta: Optional[Dict[str, Any]] = None,
) -> Dataset:
    """Backward-forward pairs for every omega_c of the grid.

    Each omega_c draws its points from its own child of the master seed, so
    the result does not depend on scheduling.
    """
    dt = dt or system.dt
    children = np.random.SeedSequence(seed).spawn(len(omegas))

    def one(index: int) -> tuple[pd.DataFrame, float, float]:
        omega_c = float(omegas[index])
        design = build_design(omega_c, system.d_x, system.d_y)
        child_seed = int(children[index].generate_state(1)[0])
        points = sample_points(method, n, system.lower, system.upper, child_seed)
        x, z, error = backward_forward(system, design, points, dt=dt, z0=z0)
        return _pairs_frame(omega_c, x, z), convergence_time(design), float(error.max())

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(
            tqdm(pool.map(one, range(len(omegas))), total=len(omegas), desc="Sampling omega_c grid")
        )

    frame = pd.concat([r[0] for r in results], ignore_index=True)
    meta = {
        "seed": int(seed),
        "N": int(len(results[0][0])) if results else 0,
        "dt": float(dt),
        "t_c": {f"{float(w):.17g}": r[1] for w, r in zip(omegas, results)},
        "max_roundtrip_error": max((r[2] for r in results), default=0.0),
        "system": system.name,
        "sampler": method,
    }
    meta.update(extra_meta or {})
    return Dataset(frame=frame, meta=meta)
