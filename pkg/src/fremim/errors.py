"""Exception hierarchy shared by every module of the package."""


class FremimError(Exception):
    """Base class for all package errors."""


class NonFiniteInput(FremimError, ValueError):
    pass


class NonRealResult(FremimError, ValueError):
    pass


class FlagMismatch(FremimError, ValueError):
    pass


class InvalidPassband(FremimError, ValueError):
    pass


class ShapeMismatch(FremimError, ValueError):
    pass


class InsufficientForeground(FremimError, ValueError):
    pass


class InvalidRatio(FremimError, ValueError):
    pass


class InvalidSchedule(FremimError, ValueError):
    pass


class CoordinateOutOfRange(FremimError, IndexError):
    pass


class LabelOutOfRange(FremimError, ValueError):
    pass


class GenerationFailed(FremimError, RuntimeError):
    pass


class FormatError(FremimError, ValueError):
    pass


class TruncationError(FormatError):
    pass


class InvalidSplit(FremimError, ValueError):
    pass


class ConfigError(FremimError, ValueError):
    pass


class CheckpointError(FremimError, RuntimeError):
    pass


class DataExhausted(FremimError, RuntimeError):
    pass


class TrainingDiverged(FremimError, FloatingPointError):
    pass
