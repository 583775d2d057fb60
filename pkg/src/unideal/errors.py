"""Exception types raised across the package."""

from __future__ import annotations


class UnidealError(Exception):
    """Base class for all package errors."""


class InvalidInputError(UnidealError, ValueError):
    pass


class ShapeError(UnidealError, ValueError):
    pass


class IncompatibleHeadError(UnidealError, ValueError):
    """Raised when a head snapshot does not fit the receiving model."""


class ConfigurationError(UnidealError, ValueError):
    """Invalid experiment configuration.

    ``violations`` lists every problem found, not only the first one.
    """

    def __init__(self, message: str | list[str]):
        if isinstance(message, str):
            self.violations = [message]
        else:
            self.violations = list(message)
        super().__init__("; ".join(self.violations))


class IngestionError(UnidealError):
    """CSV data could not be loaded.

    ``rows`` holds the 1-based file line numbers that were rejected.
    """

    def __init__(self, message: str, rows: list[int] | None = None):
        self.rows = list(rows or [])
        super().__init__(message)


class GradientCheckError(UnidealError, ArithmeticError):
    pass
