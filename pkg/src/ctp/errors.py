"""Exception hierarchy. The CLI maps each class to an exit code."""


class CTPError(Exception):
    exit_code = 4


class ConfigError(CTPError, ValueError):
    """Bad hyperparameter, config field or registry layout."""

    exit_code = 2


class DataError(CTPError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class InputShapeError(DataError):
    pass


class DegenerateVectorError(DataError, ArithmeticError):
    """A vector that must be 2-norm normalized has (near) zero length."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvariantError(CTPError, AssertionError):
    exit_code = 4
