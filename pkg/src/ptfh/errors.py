"""Exception types shared across the package."""

from __future__ import annotations


class PTFHError(Exception):
    """Base class for all package errors."""


class DomainError(PTFHError, ValueError):
    """An argument lies outside the domain of a function."""


class TransformOverflowError(PTFHError, OverflowError):
    """The inverse transform exceeded the representable range.

    ``index`` is the flat position of the first offending element, when known.
    """

    def __init__(self, message: str, index: int | None = None) -> None:
        super().__init__(message)
        self.index = index


class DataError(PTFHError, ValueError):
    """Invalid or inconsistent area-level data."""


class EstimationError(PTFHError, ArithmeticError):
    """Model fitting could not proceed (rank deficiency, degenerate variances)."""
