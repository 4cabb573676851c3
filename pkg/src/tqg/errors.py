"""Exception hierarchy.

Every exception carries a short ``category`` used by the CLI to print
machine-readable ``error: <category>: <detail>`` lines.
"""


class TqgError(Exception):
    category = "error"
    exit_code = 1


class InvalidSizeError(TqgError, ValueError):
    category = "invalid-size"
    exit_code = 2


class InvalidFieldError(TqgError, ValueError):
    category = "invalid-field"
    exit_code = 2


class ConfigError(TqgError, ValueError):
    category = "config"
    exit_code = 2


class NumericError(TqgError, ArithmeticError):
    category = "numeric"
    exit_code = 4


class StepFailure(NumericError):
    """Fixed-point iteration did not reach tolerance."""

    category = "step-failure"

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FormatError(TqgError, ValueError):
    category = "format"
    exit_code = 3


class IoError(TqgError, OSError):
    category = "io"
    exit_code = 5


class LockedError(TqgError):
    """Another process holds the output directory."""

    category = "locked"
    exit_code = 6
