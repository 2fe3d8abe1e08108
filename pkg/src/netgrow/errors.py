"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see :mod:`netgrow.cli`).
"""


class GrowError(Exception):
    """Base class for all package errors."""


class DomainError(GrowError, ValueError):
    """An input violates a mathematical precondition."""


class ShapeError(GrowError, ValueError):
    """Array dimensions do not chain."""


class DataError(GrowError):
    """A dataset or file could not be read or is inconsistent."""


class NumericalError(GrowError, ArithmeticError):
    """A decomposition failed to converge or produced non-finite output."""


class VerificationFailure(GrowError):
    """One or more invariant checks failed."""
