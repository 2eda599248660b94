"""kkl-tune - KKL observers learned as a function of the filter cut-off, and their tuning."""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .core import KKLPipeline
from .errors import KKLTuneError

__all__ = ["ExperimentConfig", "KKLPipeline", "KKLTuneError", "load_config"]
