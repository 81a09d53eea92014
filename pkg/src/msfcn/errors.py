"""Exception types shared across the package."""


class MsfcnError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ShapeError(MsfcnError, ValueError):
    exit_code = 2


class FormatError(MsfcnError, ValueError):
    """A TNS file is malformed. ``field`` names the offending header field."""

    exit_code = 2

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DataError(MsfcnError, ValueError):
    exit_code = 2


class ConfigError(MsfcnError, ValueError):
    exit_code = 1


class CheckpointError(MsfcnError):
    exit_code = 1


class NumericError(MsfcnError, ArithmeticError):
    exit_code = 3
