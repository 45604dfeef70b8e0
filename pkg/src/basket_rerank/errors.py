"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
SolverError -> 3.
"""


class UsageError(Exception):
    """Bad flags, inconsistent configuration, misuse of the API."""


class DataError(Exception):
    """Malformed or insufficient input data."""


class SolverError(Exception):
    """A per-user optimization problem could not be solved."""
