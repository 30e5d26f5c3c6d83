"""Exception hierarchy shared by every module."""


class RemoraError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(RemoraError, ValueError):
    pass


class InvalidConfigError(RemoraError, ValueError):
    pass


class InvariantViolationError(RemoraError, ValueError):
    pass


class FormatError(RemoraError, ValueError):
    """A file failed magic/version/length validation."""


class NumericError(RemoraError, ArithmeticError):
    """A computation produced non-finite values.

    ``where`` names the offending layer or step so callers can report it.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class TrainingDivergenceError(NumericError):
    pass
