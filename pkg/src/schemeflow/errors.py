"""Shared exception types for schemeflow.

Exit-code mapping used by the CLI lives in :mod:`schemeflow.cli`; library
code raises these and never calls ``sys.exit`` itself.
"""

from __future__ import annotations


class SchemeflowError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(SchemeflowError):
    """Source text could not be tokenized or parenthesized correctly."""

    def __init__(self, message: str, line: int, col: int) -> None:
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class ValidationError(SchemeflowError):
    """A well-formed s-expression is outside the supported subset."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None) -> None:
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.message = message
        self.line = line
        self.col = col


class RuleError(SchemeflowError):
    """A deductive rule or relation declaration is malformed."""


class FactCeilingExceeded(SchemeflowError):
    """Saturation grew past the configured fact ceiling (likely divergence)."""

    def __init__(self, count: int, ceiling: int) -> None:
        super().__init__(f"fact count {count} exceeded ceiling {ceiling}")
        self.count = count
        self.ceiling = ceiling
