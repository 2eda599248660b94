"""Pipeline orchestration: generate, train, tune, evaluate."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import ExperimentConfig
from .errors import ConfigError, DigestMismatchError, InputError
from .learning import (
    AutoencoderModel,
    LearnedObserver,
    Model,
    fine_tune,
    load_model,
    save_model,
    train_autoencoder,
    train_supervised,
)
from .linfilter import build_design
from .observer import ContractionFit, EstimationRun, contraction_check, error_heatmap, run_experiment
from .sampling import Dataset, convergence_time, generate_dataset, omega_grid, sample_points, write_sidecar
from .tuning import TuningReport, sweep

logger = logging.getLogger(__name__)


def check_omega(omega_c: float) -> float:
    if not omega_c > 0:
        raise ConfigError("omega_c", f"must be positive, got {omega_c:g}")
    return float(omega_c)


class KKLPipeline:
    """One experiment: a configuration and the directory holding its artifacts."""

    DATASET = "dataset.csv"
    CHECKPOINT = "model.json"
    TRAINING_LOG = "training_log.csv"
    REPORT = "tuning_report.csv"
    CONFIG = "config.toml"

    def __init__(
        self,
        config: ExperimentConfig,
        out_dir: Union[str, Path] = "runs",
        threads: int = 1,
        show_progress: bool = True,
    ):
        self.config = config
        self.out_dir = Path(out_dir)
        self.threads = max(1, threads)
        self.show_progress = show_progress
        self.system = config.build_system()

    # Artifacts

    @property
    def dataset_path(self) -> Path:
        return self.out_dir / self.DATASET

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / self.CHECKPOINT

    @property
    def training_log_path(self) -> Path:
        return self.out_dir / self.TRAINING_LOG

    @property
    def report_path(self) -> Path:
        return self.out_dir / self.REPORT

    def run_path(self, omega_c: float, sigma: float) -> Path:
        return self.out_dir / f"run_w{omega_c:g}_s{sigma:g}.csv"

    def heatmap_path(self, omega_c: float) -> Path:
        return self.out_dir / f"heatmap_w{omega_c:g}.csv"

    def _save_config(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / self.CONFIG).write_text(self.config.to_toml())

    def _digests(self) -> Dict[str, str]:
        return {"data_digest": self.config.data_digest(), "config_digest": self.config.digest()}

    def _check_digest(self, artifact: Union[str, Path], found: Optional[str]) -> None:
        expected = self.config.data_digest()
        if found is None:
            logger.warning(f"{artifact} carries no data digest; cannot verify its configuration")
        elif found != expected:
            raise DigestMismatchError(str(artifact), expected, found)

    def omegas(self) -> np.ndarray:
        g = self.config.omega_grid
        return omega_grid(g.min, g.max, g.count, g.spacing)

    # Stages

    def generate(self) -> Dataset:
        """Backward-forward pairs over the configured omega_c grid."""
        omegas = self.omegas()
        logger.info(
            f"Generating {self.config.sampler.n} pairs for each of {len(omegas)} omega_c values "
            f"({self.system.name}, dt={self.config.dt():g})"
        )
        dataset = generate_dataset(
            self.system,
            omegas,
            n=self.config.sampler.n,
            seed=self.config.sampler.seed,
            dt=self.config.dt(),
            method=self.config.sampler.method,
            threads=self.threads,
            extra_meta=self._digests(),
        )
        self._save_config()
        dataset.to_csv(self.dataset_path)
        logger.info("Convergence time per omega_c:")
        for omega_c, t_c in dataset.meta["t_c"].items():
            logger.info(f"  omega_c={float(omega_c):.4g}: t_c={t_c:.4g}")
        return dataset

    def load_dataset(self, path: Optional[Union[str, Path]] = None) -> Dataset:
        path = Path(path) if path else self.dataset_path
        if not path.exists():
            raise InputError(f"dataset not found: {path} (run 'generate' first)")
        dataset = Dataset.from_csv(path)
        self._check_digest(path, dataset.meta.get("data_digest"))
        if len(dataset.x_columns) != self.system.d_x:
            raise InputError(f"{path} has {len(dataset.x_columns)} state columns, system has d_x={self.system.d_x}")
        return dataset

    def load_checkpoint(self, path: Optional[Union[str, Path]] = None) -> Model:
        path = Path(path) if path else self.checkpoint_path
        if not path.exists():
            raise InputError(f"checkpoint not found: {path} (run 'train' first)")
        model = load_model(path)
        self._check_digest(path, model.training_meta.get("data_digest"))
        return model

    def load_report(self, path: Optional[Union[str, Path]] = None) -> TuningReport:
        path = Path(path) if path else self.report_path
        if not path.exists():
            raise InputError(f"tuning report not found: {path} (run 'tune' first)")
        report = TuningReport.from_csv(path)
        self._check_digest(path, report.grid_meta.get("data_digest"))
        return report

    def tuned_omega(self, omega_c: Optional[float] = None) -> float:
        """omega_c as given, or the minimizer of the saved tuning report."""
        if omega_c is not None:
            return check_omega(omega_c)
        omega_c = self.load_report().argmin_omega_c
        logger.info(f"Using the tuned omega_c={omega_c:.6g} from {self.report_path}")
        return omega_c

    def _pairs_at(self, dataset: Dataset, omega_c: float) -> Dataset:
        try:
            return dataset.at_omega(omega_c)
        except InputError:
            logger.info(f"No stored pairs at omega_c={omega_c:g}; sampling a fresh set")
            return generate_dataset(
                self.system, [omega_c], n=self.config.sampler.n, seed=self.config.sampler.seed,
                dt=self.config.dt(), method=self.config.sampler.method,
            )

    def train(
        self,
        dataset_path: Optional[Union[str, Path]] = None,
        resume: Optional[Union[str, Path]] = None,
        fine_tune_omega: Optional[float] = None,
    ) -> Tuple[Model, pd.DataFrame]:
        """Train in the configured mode, then write the checkpoint and loss log."""
        settings = self.config.training_settings(self.show_progress)
        seed = self.config.trainer.seed
        meta = self._digests()
        if fine_tune_omega is not None:
            fine_tune_omega = check_omega(fine_tune_omega)

        if self.config.trainer.mode == "autoencoder":
            if resume or fine_tune_omega is not None:
                raise InputError("resume and fine-tuning apply to the supervised mode only")
            model, history = self._train_autoencoder(settings, seed, meta)
        else:
            dataset = self.load_dataset(dataset_path)
            init = self.load_checkpoint(resume) if resume else None
            if init is not None and not isinstance(init, LearnedObserver):
                raise InputError(f"{resume} is not a supervised checkpoint")
            if fine_tune_omega is not None:
                if init is None:
                    init = self.load_checkpoint()
                model, history = fine_tune(
                    init, self._pairs_at(dataset, fine_tune_omega), fine_tune_omega, settings, seed
                )
                model.training_meta.update(meta)
            else:
                model, history = train_supervised(dataset, settings, seed, init=init, meta=meta)

        self._save_config()
        save_model(model, self.checkpoint_path)
        history.to_csv(self.training_log_path, index=False, float_format="%.17g")
        final = history.iloc[-1]
        losses = ", ".join(f"{k} {final[k]:.4e}" for k in history.columns if k.startswith("loss"))
        logger.info(f"Final losses: {losses}")
        return model, history

    def _train_autoencoder(self, settings, seed: int, meta: Dict[str, str]):
        t = self.config.trainer
        x = sample_points(
            self.config.sampler.method, t.autoencoder_samples,
            self.system.lower, self.system.upper, self.config.sampler.seed,
        )
        design = build_design(t.autoencoder_omega_c, self.system.d_x, self.system.d_y)
        return train_autoencoder(
            x, self.system, t.lambda_weight, design, t.optimize_D, settings, seed, meta=meta
        )

    def tune(self, checkpoint: Optional[Union[str, Path]] = None) -> TuningReport:
        """Criterion sweep; an autoencoder owns one D, so its sweep has one entry."""
        model = self.load_checkpoint(checkpoint)
        omegas: Sequence[float] = [model.omega_c] if isinstance(model, AutoencoderModel) else self.omegas()
        report = sweep(
            model, omegas, self.system,
            n_test=self.config.evaluation.n_test,
            dt=self.config.dt(),
            norm=self.config.evaluation.jacobian_norm,
            threads=self.threads,
        )
        report.grid_meta.update(self._digests())
        report.to_csv(self.report_path)
        return report

    def evaluate(
        self,
        omega_c: float,
        sigma: float,
        x0: Optional[Sequence[float]] = None,
        checkpoint: Optional[Union[str, Path]] = None,
        seed: Optional[int] = None,
    ) -> EstimationRun:
        omega_c = check_omega(omega_c)
        model = self.load_checkpoint(checkpoint)
        e = self.config.evaluation
        run = run_experiment(
            model, self.system, omega_c,
            x0=np.asarray(x0 if x0 is not None else e.x0, dtype=float),
            duration=e.duration,
            sigma=sigma,
            seed=self.config.sampler.seed if seed is None else seed,
            dt=self.config.dt(),
            z0=e.z0,
            hold=e.hold,
        )
        run.to_csv(self.run_path(omega_c, sigma), meta=self._digests())
        return run

    def heatmap(self, omega_c: float, checkpoint: Optional[Union[str, Path]] = None) -> pd.DataFrame:
        omega_c = check_omega(omega_c)
        model = self.load_checkpoint(checkpoint)
        frame = error_heatmap(
            model, model.design(omega_c), self.system,
            n_grid=self.config.evaluation.heatmap_points, dt=self.config.dt(),
        )
        path = self.heatmap_path(omega_c)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g")
        write_sidecar(path, {"omega_c": float(omega_c), **self._digests()})
        logger.info(f"Saved heatmap to {path}")
        return frame

    def contraction(
        self,
        omega_c: float,
        x0: Optional[Sequence[float]] = None,
        checkpoint: Optional[Union[str, Path]] = None,
    ) -> ContractionFit:
        omega_c = check_omega(omega_c)
        model = self.load_checkpoint(checkpoint)
        design = model.design(omega_c)
        logger.info(f"Contraction run over 2 t_c = {2 * convergence_time(design):.4g}")
        return contraction_check(
            model, design, self.system,
            x0=np.asarray(x0 if x0 is not None else self.config.evaluation.x0, dtype=float),
            dt=self.config.dt(),
        )
