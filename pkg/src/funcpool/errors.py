"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``DataError`` and subclasses → 3,
``NumericalError`` → 4.
"""

from __future__ import annotations


class FuncpoolError(Exception):
    """Base class for all package errors."""


class DataError(FuncpoolError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AlignmentError(DataError):
    def __init__(self, message: str, offending: list[str] | None = None):
        self.offending = list(offending or [])
        if self.offending:
            message = f"{message}: {', '.join(self.offending)}"
        super().__init__(message)


class FormatError(DataError):
    """Binary container or checkpoint is not well formed."""


class NotFoundError(DataError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ConfigError(DataError):
    pass


class NumericalError(FuncpoolError):
    """NaN/inf during training or a failed gradient check."""
