"""Exception hierarchy shared by all lpmtl modules."""


class LpMtlError(Exception):
    """Base class for every error raised by this package."""


class InvalidDataset(LpMtlError, ValueError):
    pass


class NumericError(LpMtlError, ArithmeticError):
    pass


class InvalidExponent(LpMtlError, ValueError):
    pass


class ZeroVector(LpMtlError, ValueError):
    pass


class UnsupportedExponent(LpMtlError, ValueError):
    pass


class DegenerateTask(LpMtlError, ValueError):
    """A task whose labels contain a single class."""


class InvalidTask(LpMtlError, IndexError):
    pass


class ParseError(LpMtlError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(LpMtlError, ValueError):
    pass
