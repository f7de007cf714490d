"""Exception hierarchy shared across the package."""


class HusformerError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HusformerError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(HusformerError, ValueError):
    """A configuration value is out of range or inconsistent."""


class DataError(HusformerError, ValueError):
    """A sample or label does not match the declared dataset layout."""


class FormatError(DataError):
    """A serialized file is malformed.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EvaluationError(HusformerError, ArithmeticError):
    """A computation produced a non-finite value."""
