"""Exception hierarchy for kkl_tune.

Each error carries the exit code the CLI returns when it escapes a command.
"""

from __future__ import annotations

from typing import Any, Optional

SATURATION_ADVICE = (
    "the system blows up in backward time; saturate f smoothly outside the "
    "domain of interest (e.g. use 'van-der-pol' instead of 'van-der-pol-raw')"
)


class KKLTuneError(Exception):
    """Base class for all kkl_tune errors."""

    exit_code: int = 1


class ConfigError(KKLTuneError):
    """Invalid or unresolvable configuration value."""

    exit_code = 2

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DigestMismatchError(ConfigError):
    """Artifacts produced from different configurations were combined."""

    def __init__(self, artifact: str, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(
            "data_digest",
            f"{artifact} was produced with digest {found[:12]}, config has {expected[:12]}",
        )


class BlowUpError(KKLTuneError):
    """A trajectory left every bounded set during integration."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        *,
        stage: Optional[int] = None,
        step: Optional[int] = None,
        point: Optional[Any] = None,
    ):
        self.stage = stage
        self.step = step
        self.point = point
        super().__init__(message)


class TrainingError(KKLTuneError):
    """Training produced a non-finite loss."""

    exit_code = 4

    def __init__(self, network: str, epoch: int, batch: int, loss: float):
        self.network = network
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} while training {network} "
            f"(epoch {epoch}, batch {batch})"
        )


class TuningError(KKLTuneError):
    """No valid entry in a criterion sweep."""

    exit_code = 5


class EstimationError(KKLTuneError):
    """The observer filter state became non-finite."""

    exit_code = 6

    def __init__(self, step: int, time: float):
        self.step = step
        self.time = time
        super().__init__(f"non-finite filter state at step {step} (t={time:.6g})")


class DesignError(KKLTuneError):
    """Invalid filter design: non-Hurwitz, not conjugate closed, or uncontrollable."""


class NumericalError(KKLTuneError):
    """A numerical routine failed to converge."""


class InputError(KKLTuneError, ValueError):
    """Invalid argument shape or range."""
