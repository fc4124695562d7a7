"""Exception types raised across the package."""


class TadevocError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TadevocError, ValueError):
    """Shapes, hyper-parameters or component settings are inconsistent."""


class InputError(TadevocError, ValueError):
    """User-supplied data (waveforms, batches, score lists) is malformed."""


class NumericalDegeneracyError(TadevocError, ArithmeticError):
    """A computation would divide by a zero norm."""


class UndefinedReferenceError(TadevocError, ArithmeticError):
    """A relative measure was asked for against an all-zero reference."""


class UsageError(TadevocError, RuntimeError):
    """An API was called in a way its contract forbids."""


class FormatError(TadevocError, ValueError):
    """A binary file is truncated or does not match its declared layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
