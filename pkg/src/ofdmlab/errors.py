"""Exception types shared across the package."""


class OfdmLabError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(OfdmLabError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(OfdmLabError):
    """A configuration file could not be parsed or validated.

    Carries the offending line number when one is known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorruptCheckpointError(OfdmLabError):
    """A checkpoint failed its integrity or architecture checks."""


class NoEstimatesError(OfdmLabError):
    """Phase estimation produced no usable samples for a symbol."""


class TrainingDivergedError(OfdmLabError):
    """Training hit a non-finite loss; carries epoch diagnostics."""

    def __init__(self, message: str, epoch: int, lr: float):
        super().__init__(f"{message} (epoch {epoch}, lr {lr:g})")
        self.epoch = epoch
        self.lr = lr


class NumericsError(OfdmLabError):
    """A numerical routine failed to reach its accuracy target."""
