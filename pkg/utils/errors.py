"""
Exception hierarchy for the separation laboratory.
"""

from typing import Optional


class EggSepError(Exception):
    """Base class for all errors raised by eggsep."""


class ShapeMismatchError(EggSepError, ValueError):
    """Operands or samples do not have the shapes an operation needs."""


class NonFiniteError(EggSepError, ArithmeticError):
    """A NaN or Inf appeared in a value or gradient."""


class DivergenceError(NonFiniteError):
    """A training loss became non-finite."""


class ConfigError(EggSepError, ValueError):
    """Invalid, missing or unknown configuration key."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class FormatError(EggSepError, ValueError):
    """A file on disk does not follow its declared binary format."""

    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int] = None):
        details = message
        if path is not None:
            details = f"{details} [{path}]"
        if offset is not None:
            details = f"{details} at byte offset {offset}"
        super().__init__(details)
        self.path = path
        self.offset = offset


class MissingHistoryError(EggSepError):
    """Diagnostics were requested for a run that did not record them."""
