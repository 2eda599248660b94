"""Experiment configuration: defaults per system, TOML loading and digests."""

from __future__ import annotations

import hashlib
import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .dynamics import SYSTEM_NAMES, SaturationSpec, SystemModel, get_system
from .errors import ConfigError, InputError
from .learning import TrainingSettings

logger = logging.getLogger(__name__)

LOG_ENV = "KKL_TUNE_LOG"
THREADS_ENV = "KKL_TUNE_THREADS"

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}


@dataclass
class SystemConfig:
    name: str = "rev-duffing"
    saturation_r: float = 3.0
    saturation_d: float = 7.0


@dataclass
class SamplerConfig:
    n: int = 5000
    seed: int = 0
    method: str = "lhs"


@dataclass
class OmegaGridConfig:
    min: float = 0.03
    max: float = 1.0
    count: int = 100
    spacing: str = "log"


@dataclass
class IntegratorConfig:
    # None means the system's own step
    dt: Optional[float] = None


@dataclass
class NetworkConfig:
    hidden_sizes: List[int] = field(default_factory=lambda: [50, 50, 50, 50, 50])
    activation: str = "silu"


@dataclass
class TrainerConfig:
    mode: str = "supervised"
    seed: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 1024
    epochs: int = 100
    validation_split: float = 0.1
    patience: int = 10
    lambda_weight: float = 0.1
    optimize_D: bool = False
    autoencoder_omega_c: float = 0.2
    autoencoder_samples: int = 70000


@dataclass
class EvaluationConfig:
    noise_sigmas: List[float] = field(default_factory=lambda: [0.5])
    x0: List[float] = field(default_factory=lambda: [0.6, 0.6])
    duration: float = 50.0
    n_test: int = 10000
    heatmap_points: int = 2500
    jacobian_norm: str = "fro"
    hold: str = "linear"
    z0: str = "zero"


SECTIONS = {
    "system": SystemConfig,
    "sampler": SamplerConfig,
    "omega_grid": OmegaGridConfig,
    "integrator": IntegratorConfig,
    "network": NetworkConfig,
    "trainer": TrainerConfig,
    "evaluation": EvaluationConfig,
}

DATA_SECTIONS = ("system", "sampler", "omega_grid", "integrator")

# per-system overrides of the section defaults
SYSTEM_DEFAULTS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "rev-duffing": {},
    "van-der-pol": {
        "evaluation": {"x0": [0.1, 0.1], "noise_sigmas": [0.25]},
    },
    "van-der-pol-raw": {
        "evaluation": {"x0": [0.1, 0.1], "noise_sigmas": [0.25]},
    },
    "harmonic": {
        "sampler": {"n": 1000},
        "omega_grid": {"min": 0.1, "max": 1.0, "count": 5},
        "evaluation": {"x0": [0.5, 0.5], "noise_sigmas": [0.0], "duration": 20.0, "n_test": 400},
    },
}


@dataclass
class ExperimentConfig:
    """Everything that determines the artifacts of one experiment."""

    system: SystemConfig = field(default_factory=SystemConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    omega_grid: OmegaGridConfig = field(default_factory=OmegaGridConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        name = data.get("system", {}).get("name", SystemConfig.name)
        config = default_config(name)
        _overlay(config, data)
        validate(config)
        return config

    def digest(self) -> str:
        return _sha256(self.to_dict())

    def data_digest(self) -> str:
        """Hash of the sections that determine a dataset."""
        data = self.to_dict()
        return _sha256({key: data[key] for key in DATA_SECTIONS})

    def saturation(self) -> SaturationSpec:
        return SaturationSpec(r=self.system.saturation_r, d=self.system.saturation_d)

    def build_system(self) -> SystemModel:
        return get_system(self.system.name, self.saturation())

    def dt(self) -> float:
        return self.integrator.dt or self.build_system().dt

    def training_settings(self, show_progress: bool = True) -> TrainingSettings:
        t = self.trainer
        return TrainingSettings(
            hidden_sizes=tuple(self.network.hidden_sizes),
            activation=self.network.activation,
            learning_rate=t.learning_rate,
            batch_size=t.batch_size,
            epochs=t.epochs,
            validation_split=t.validation_split,
            patience=t.patience,
            show_progress=show_progress,
        )

    def to_toml(self) -> str:
        """Canonical TOML text; None values are left out."""
        lines: List[str] = []
        for section, values in self.to_dict().items():
            lines.append(f"[{section}]")
            for key, value in values.items():
                if value is not None:
                    lines.append(f"{key} = {json.dumps(value)}")
            lines.append("")
        return "\n".join(lines)


def _sha256(payload: Dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def default_config(system: str = "rev-duffing") -> ExperimentConfig:
    """Defaults of the named system."""
    if system not in SYSTEM_NAMES:
        raise ConfigError("system.name", f"unknown system '{system}', expected one of {', '.join(SYSTEM_NAMES)}")
    config = ExperimentConfig(system=SystemConfig(name=system))
    _overlay(config, SYSTEM_DEFAULTS[system])
    return config


def _overlay(config: ExperimentConfig, data: Dict[str, Any]) -> None:
    for section, values in data.items():
        if section not in SECTIONS:
            raise ConfigError(section, "unknown section")
        if not isinstance(values, dict):
            raise ConfigError(section, "expected a table")
        target = getattr(config, section)
        known = {f.name: f for f in fields(target)}
        for key, value in values.items():
            path = f"{section}.{key}"
            if key not in known:
                raise ConfigError(path, "unknown key")
            setattr(target, key, _coerce(path, value, getattr(target, key)))


def _coerce(path: str, value: Any, current: Any) -> Any:
    """Match the type of the default; ints are accepted where floats are."""
    if current is None or value is None:
        return value
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(current, list):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return list(value)
    if not isinstance(value, type(current)):
        raise ConfigError(path, f"expected {type(current).__name__}, got {value!r}")
    return value


def _positive(path: str, value: float) -> None:
    if value is None or value <= 0:
        raise ConfigError(path, f"must be positive, got {value}")


def validate(config: ExperimentConfig) -> None:
    """Raise ConfigError naming the first offending field."""
    if config.system.name not in SYSTEM_NAMES:
        raise ConfigError("system.name", f"unknown system '{config.system.name}', expected one of {', '.join(SYSTEM_NAMES)}")
    _positive("system.saturation_r", config.system.saturation_r)
    _positive("system.saturation_d", config.system.saturation_d)
    _positive("sampler.n", config.sampler.n)
    if config.sampler.seed < 0:
        raise ConfigError("sampler.seed", "must be a non-negative integer")
    if config.sampler.method not in ("lhs", "uniform"):
        raise ConfigError("sampler.method", f"expected 'lhs' or 'uniform', got '{config.sampler.method}'")
    _positive("omega_grid.min", config.omega_grid.min)
    _positive("omega_grid.count", config.omega_grid.count)
    if config.omega_grid.max < config.omega_grid.min:
        raise ConfigError("omega_grid.max", "must not be below omega_grid.min")
    if config.omega_grid.spacing not in ("log", "linear"):
        raise ConfigError("omega_grid.spacing", f"expected 'log' or 'linear', got '{config.omega_grid.spacing}'")
    if config.integrator.dt is not None:
        if isinstance(config.integrator.dt, bool) or not isinstance(config.integrator.dt, (int, float)):
            raise ConfigError("integrator.dt", f"expected a number, got {config.integrator.dt!r}")
        _positive("integrator.dt", config.integrator.dt)
    if not config.network.hidden_sizes or any(
        not isinstance(s, int) or s < 1 for s in config.network.hidden_sizes
    ):
        raise ConfigError("network.hidden_sizes", "expected a non-empty list of positive integers")
    if config.network.activation not in ("silu", "tanh"):
        raise ConfigError("network.activation", f"unknown activation '{config.network.activation}'")
    t = config.trainer
    if t.mode not in ("supervised", "autoencoder"):
        raise ConfigError("trainer.mode", f"expected 'supervised' or 'autoencoder', got '{t.mode}'")
    if t.seed < 0:
        raise ConfigError("trainer.seed", "must be a non-negative integer")
    for key in ("learning_rate", "batch_size", "epochs", "patience", "lambda_weight",
                "autoencoder_omega_c", "autoencoder_samples"):
        _positive(f"trainer.{key}", getattr(t, key))
    if not 0 <= t.validation_split < 1:
        raise ConfigError("trainer.validation_split", "must lie in [0, 1)")
    e = config.evaluation
    if any(s < 0 for s in e.noise_sigmas):
        raise ConfigError("evaluation.noise_sigmas", "noise levels must be >= 0")
    if len(e.x0) != config.build_system().d_x:
        raise ConfigError("evaluation.x0", f"expected {config.build_system().d_x} components")
    _positive("evaluation.duration", e.duration)
    _positive("evaluation.n_test", e.n_test)
    _positive("evaluation.heatmap_points", e.heatmap_points)
    if e.jacobian_norm not in ("fro", "spectral"):
        raise ConfigError("evaluation.jacobian_norm", f"expected 'fro' or 'spectral', got '{e.jacobian_norm}'")
    if e.hold not in ("linear", "zoh"):
        raise ConfigError("evaluation.hold", f"expected 'linear' or 'zoh', got '{e.hold}'")
    if e.z0 not in ("zero", "manifold"):
        raise ConfigError("evaluation.z0", f"expected 'zero' or 'manifold', got '{e.z0}'")


def load_config(path: Optional[Union[str, Path]] = None, system: Optional[str] = None) -> ExperimentConfig:
    """Read a TOML file over the defaults of its system.

    Without a path the defaults of ``system`` are returned. A ``system``
    argument overrides the name in the file.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("config", f"file not found: {path}")
        try:
            data = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigError("config", f"{path}: {e}") from e
        logger.info(f"Loaded configuration from {path}")
    if system is not None:
        data.setdefault("system", {})["name"] = system
    try:
        return ExperimentConfig.from_dict(data)
    except InputError as e:
        raise ConfigError("system", str(e)) from e


def log_level_from_env(default: int = logging.INFO) -> int:
    value = os.getenv(LOG_ENV, "").strip().lower()
    if not value:
        return default
    if value not in LOG_LEVELS:
        logger.warning(f"Ignoring {LOG_ENV}={value!r}; expected one of error, warn, info, debug")
        return default
    return LOG_LEVELS[value]


def threads_from_env(default: int = 1) -> int:
    value = os.getenv(THREADS_ENV, "").strip()
    if not value:
        return default
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(THREADS_ENV, f"expected an integer, got {value!r}")
    if threads < 1:
        raise ConfigError(THREADS_ENV, "must be at least 1")
    return threads


def parse_vector(text: str, name: str) -> Tuple[float, ...]:
    """'0.6,0.6' -> (0.6, 0.6)."""
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(name, f"expected comma-separated numbers, got {text!r}")
