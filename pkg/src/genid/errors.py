"""Exception hierarchy shared by every module in the package."""


class GenIdError(Exception):
    """Base class for all errors raised by genid."""


class InvalidArgumentError(GenIdError, ValueError):
    pass


class NoEquilibriumError(GenIdError):
    pass


class SimulationDivergedError(GenIdError):
    def __init__(self, time, reason="unstable trajectory"):
        self.time = float(time)
        self.reason = reason
        super().__init__(f"simulation diverged at t={self.time:.3f} s: {reason}")


class RandomizationFailedError(GenIdError):
    pass


class TooShortError(GenIdError, ValueError):
    pass


class DegenerateChannelError(GenIdError, ValueError):
    def __init__(self, channel):
        self.channel = channel
        super().__init__(f"channel {channel!r} has (near) zero variance in the training data")


class CsvParseError(GenIdError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class SingularDesignError(GenIdError):
    pass


class IdentifiabilityError(GenIdError):
    pass


class InsufficientHistoryError(GenIdError, ValueError):
    pass


class UndefinedCriterionError(GenIdError):
    pass


class NoValidOrderError(GenIdError):
    pass


class DiagnosticFailedError(GenIdError):
    pass


class ShapeError(GenIdError, ValueError):
    pass


class TrainingDivergedError(GenIdError):
    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite in epoch {epoch}")


class ZeroVarianceError(GenIdError, ValueError):
    pass


class UndefinedNormalizationError(GenIdError, ValueError):
    pass


class EmptyInputError(GenIdError, ValueError):
    pass


class ConfigError(GenIdError, ValueError):
    pass


class StageError(GenIdError):
    """A pipeline stage failed; wraps the underlying cause."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
