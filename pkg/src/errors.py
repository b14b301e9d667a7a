"""Exception types raised by the rate selection toolkit."""

from pathlib import Path
from typing import Optional


class InsufficientSamplesError(ValueError):
    """Not enough samples to form the requested order statistic or fit."""


class FitError(ValueError):
    """A model fit (GP hyperparameters, GPD maximum likelihood) failed."""


class CalibrationError(ValueError):
    """Threshold-fraction calibration found no usable location."""


class InvariantViolationError(ValueError):
    """A derived quantity violates a model invariant (e.g. non-positive scale)."""


class SamplingError(ValueError):
    """Location sampling could not place the requested number of points."""


class ConfigError(ValueError):
    """Configuration file is missing, malformed or fails validation."""


class ExperimentError(RuntimeError):
    """Experiment aborted; results gathered so far were written to ``partial_results``."""

    def __init__(self, message: str, partial_results: Optional[Path] = None):
        super().__init__(message)
        self.partial_results = partial_results
