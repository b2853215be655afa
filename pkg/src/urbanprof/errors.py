"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class UrbanprofError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(UrbanprofError):
    """Invalid or inconsistent configuration."""


class DataError(UrbanprofError):
    """Malformed or missing input data, or a violated data precondition."""


class NumericError(UrbanprofError):
    """A numerical routine failed (non-convergence, singular matrix, ...)."""
