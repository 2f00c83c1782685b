"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1,
data problems exit 2, numeric failures exit 3.
"""


class UqError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class UsageError(UqError):
    """Bad flags, missing arguments, invalid configuration values."""

    exit_code = 1


class DataError(UqError):
    """Malformed, inconsistent, or insufficient input data."""

    exit_code = 2


class NumericError(UqError):
    """Numerical failure (non-finite values, factorization breakdown)."""

    exit_code = 3
