"""Exception types shared across the package."""


class FibershapeError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class ConfigError(FibershapeError):
    """Invalid configuration value or malformed config file."""


class ConstellationFormatError(FibershapeError):
    """Malformed constellation file."""


class CalibrationError(FibershapeError):
    """Calibration data cannot support a coefficient fit."""


class TrainingDiverged(FibershapeError):
    """Training aborted on a non-finite loss or runaway launch power."""

    def __init__(self, message, iteration=None, last_finite_loss=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_finite_loss = last_finite_loss
