"""Exception hierarchy shared by every har_forge module.

The CLI maps the four top-level families onto process exit codes, so new
errors should subclass one of them rather than ``HarForgeError`` directly.
"""


class HarForgeError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(HarForgeError):
    exit_code = 2


class DataError(HarForgeError):
    exit_code = 3


class TrainingDiverged(HarForgeError):
    exit_code = 4


class IoError(HarForgeError):
    exit_code = 5


class MalformedRecord(DataError):
    """A raw sensor line that cannot be parsed."""

    def __init__(self, reason, line_no=None, line=None):
        self.reason = reason
        self.line_no = line_no
        self.line = line
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}{reason}")


class UnknownActivity(DataError):
    pass


class EmptyClass(DataError):
    pass


class InsufficientData(DataError):
    pass


class SingularErrorMatrix(DataError):
    pass


class NotFitted(HarForgeError):
    pass


class ShapeMismatch(HarForgeError, ValueError):
    pass


class LengthMismatch(HarForgeError, ValueError):
    pass


class UnknownLabel(HarForgeError, ValueError):
    pass


class NonFiniteLoss(TrainingDiverged):
    """Raised when a training loss becomes NaN or infinite.

    The partial history is attached so callers can inspect the divergence.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history
