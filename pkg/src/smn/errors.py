"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class SMNError(Exception):
    exit_code = 1


class ConfigError(SMNError, ValueError):
    exit_code = 2


class DataIOError(SMNError, OSError):
    exit_code = 3


class NumericError(SMNError, ArithmeticError):
    exit_code = 4


class ParseError(SMNError, ValueError):
    """Malformed input line; ``lineno`` is 1-based."""

    exit_code = 5

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class IngestionError(SMNError, ValueError):
    exit_code = 5


class CheckpointError(SMNError, ValueError):
    exit_code = 6


class DimensionError(SMNError, ValueError):
    exit_code = 7


class ContractError(SMNError, ValueError):
    exit_code = 7
