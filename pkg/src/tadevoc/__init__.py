"""TADE-conditioned GAN vocoder with random-window PQMF discriminators, in numpy."""

from .errors import (
    ConfigurationError,
    FormatError,
    InputError,
    NumericalDegeneracyError,
    TadevocError,
    UndefinedReferenceError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "FormatError",
    "InputError",
    "NumericalDegeneracyError",
    "TadevocError",
    "UndefinedReferenceError",
    "UsageError",
]
