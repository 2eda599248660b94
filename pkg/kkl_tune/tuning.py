"""Gain-tuning criterion alpha(omega_c) and the sweep that minimizes it."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .dynamics import SystemModel
from .errors import InputError, KKLTuneError, TuningError
from .learning import StateObserver
from .linfilter import FilterDesign, h2_norm_Gz, hinf_norm_Geps
from .sampling import backward_forward, read_sidecar, uniform_grid, write_sidecar

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["omega_c", "hinf_Geps", "h2_Gz", "J_l2", "alpha", "alpha_over_n", "n"]


@dataclass
class TuningEntry:
    omega_c: float
    hinf_Geps: float
    h2_Gz: float
    J_l2: float
    alpha: float
    alpha_over_n: float
    n: int
    valid: bool = True

    @property
    def norm_factor(self) -> float:
        return self.hinf_Geps + self.h2_Gz

    @classmethod
    def invalid(cls, omega_c: float) -> "TuningEntry":
        nan = float("nan")
        return cls(float(omega_c), nan, nan, nan, nan, nan, 0, valid=False)


@dataclass
class TuningReport:
    """One entry per omega_c, ordered by omega_c, with the selected minimizer."""

    entries: List[TuningEntry]
    grid_meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def valid_entries(self) -> List[TuningEntry]:
        return [e for e in self.entries if e.valid]

    @property
    def argmin_omega_c(self) -> float:
        """omega_c of the smallest alpha; the first (smallest omega_c) wins ties."""
        valid = self.valid_entries
        if not valid:
            raise TuningError("no valid entry in the criterion sweep")
        alphas = np.array([e.alpha for e in valid])
        return valid[int(np.argmin(alphas))].omega_c

    def to_frame(self) -> pd.DataFrame:
        rows = [{k: v for k, v in asdict(e).items() if k != "valid"} for e in self.entries]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_csv(self, path: Union[str, Path]) -> None:
        """Write the entries, with grid_meta in a JSON sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        write_sidecar(path, self.grid_meta)
        logger.info(f"Saved tuning report ({len(self.entries)} entries) to {path}")

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "TuningReport":
        frame = pd.read_csv(path, float_precision="round_trip")
        entries = [
            TuningEntry(
                omega_c=float(row.omega_c),
                hinf_Geps=float(row.hinf_Geps),
                h2_Gz=float(row.h2_Gz),
                J_l2=float(row.J_l2),
                alpha=float(row.alpha),
                alpha_over_n=float(row.alpha_over_n),
                n=int(row.n),
                valid=bool(np.isfinite(row.alpha)),
            )
            for row in frame.itertuples()
        ]
        return cls(entries=entries, grid_meta=read_sidecar(path))


def empirical_J(
    observer: StateObserver, z_points: np.ndarray, omega_c: float, norm: str = "fro"
) -> np.ndarray:
    """Per-point norm of dT*/dz in raw coordinates."""
    if norm not in ("fro", "spectral"):
        raise InputError(f"unknown Jacobian norm '{norm}'")
    J = observer.decoder_jacobian(np.atleast_2d(z_points), omega_c)
    if norm == "fro":
        return np.linalg.norm(J, ord="fro", axis=(1, 2))
    return np.linalg.norm(J, ord=2, axis=(1, 2))


def criterion_alpha(
    observer: StateObserver, design: FilterDesign, z_points: np.ndarray, norm: str = "fro"
) -> TuningEntry:
    """alpha = ||J||_2 (||G_eps||_inf + ||G_z||_H2) for one omega_c."""
    J = empirical_J(observer, z_points, design.omega_c, norm)
    hinf = hinf_norm_Geps(design)
    h2 = h2_norm_Gz(design)
    J_l2 = float(np.linalg.norm(J))
    alpha = J_l2 * (hinf + h2)
    return TuningEntry(
        omega_c=float(design.omega_c),
        hinf_Geps=hinf,
        h2_Gz=h2,
        J_l2=J_l2,
        alpha=alpha,
        alpha_over_n=alpha / len(J),
        n=len(J),
    )


def sweep(
    observer: StateObserver,
    omegas: Sequence[float],
    system: SystemModel,
    n_test: int,
    dt: Optional[float] = None,
    norm: str = "fro",
    threads: int = 1,
) -> TuningReport:
    """Evaluate the criterion over a grid of omega_c.

    Test points are a uniform grid over the system domain, paired with z by
    backward-forward sampling at each omega_c. A failing entry is kept in the
    report as invalid and ignored by the argmin.
    """
    omegas = sorted(float(w) for w in omegas)
    if not omegas:
        raise InputError("empty omega_c grid")
    x_test = uniform_grid(n_test, system.lower, system.upper)

    def one(omega_c: float) -> TuningEntry:
        try:
            design = observer.design(omega_c)
            _, z, _ = backward_forward(system, design, x_test, dt=dt)
            entry = criterion_alpha(observer, design, z, norm)
            if not np.isfinite(entry.alpha):
                raise TuningError(f"non-finite alpha at omega_c={omega_c:.4g}")
        except KKLTuneError as e:
            logger.warning(f"Criterion at omega_c={omega_c:.4g} failed, entry excluded: {e}")
            return TuningEntry.invalid(omega_c)
        logger.debug(f"omega_c={omega_c:.4g}: alpha/n={entry.alpha_over_n:.4e}")
        return entry

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        entries = list(tqdm(pool.map(one, omegas), total=len(omegas), desc="Criterion sweep"))

    report = TuningReport(
        entries=entries,
        grid_meta={"n_test": len(x_test), "sampler": "uniform", "norm": norm, "system": system.name},
    )
    logger.info(f"Criterion minimized at omega_c={report.argmin_omega_c:.4g}")
    return report
