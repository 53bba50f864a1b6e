"""Exception types shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class CMRReconError(Exception):
    exit_code = 1


class ValidationError(CMRReconError, ValueError):
    """Bad argument, shape or configuration value."""

    exit_code = 2


class ConfigError(ValidationError):
    exit_code = 2


class DataError(CMRReconError):
    """Unreadable, truncated or inconsistent data on disk."""

    exit_code = 3


class CheckpointError(DataError):
    pass


class NumericalError(CMRReconError, ArithmeticError):
    exit_code = 4
