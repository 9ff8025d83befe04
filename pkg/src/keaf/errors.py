"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class KeafError(Exception):
    pass


class DataError(KeafError, ValueError):
    """Malformed, inconsistent or insufficient input data."""


class InsufficientDataError(DataError):
    """The corpus cannot support the requested episode configuration."""


class NumericalError(KeafError, ArithmeticError):
    """Non-finite values or undefined quantities during computation."""
