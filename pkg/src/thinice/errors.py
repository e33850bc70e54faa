"""Exception hierarchy shared by every module."""


class ThinIceError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ThinIceError, ValueError):
    pass


class InvalidLabelError(ThinIceError, ValueError):
    pass


class NumericError(ThinIceError, ArithmeticError):
    """A NaN or Inf escaped a computation."""


class GradientError(ThinIceError, RuntimeError):
    """Misuse of reverse-mode differentiation (non-scalar loss, missing tape, double backward)."""


class UnsupportedError(ThinIceError, ValueError):
    pass


class ConfigError(ThinIceError, ValueError):
    pass


class CheckpointError(ThinIceError, IOError):
    pass


class TensorFormatError(CheckpointError):
    pass


class StageError(ThinIceError, RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
