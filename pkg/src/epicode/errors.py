"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, ValidationError
exits 2, NumericError exits 3.
"""

from __future__ import annotations


class ValidationError(ValueError):
    """Bad data or a violated structural contract (malformed file, bad config)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or diverged."""


class IncompatibleMaps(ValidationError):
    """Two tensor maps cannot be combined elementwise; carries the report."""

    def __init__(self, report) -> None:
        super().__init__(f"tensor maps are not compatible: {report.describe()}")
        self.report = report
