"""
Error types shared by the numerical library and the verification harness.

Every error subclasses the closest builtin so callers can catch either the
library type or the plain Python one.
"""


class AnisoError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(AnisoError, ValueError):
    pass


class UnsupportedDimensionError(AnisoError, ValueError):
    pass


class UnknownKernelError(AnisoError, KeyError):
    def __str__(self) -> str:
        # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class InvalidIndexError(AnisoError, IndexError):
    pass


class SingularPointError(AnisoError, ZeroDivisionError):
    pass


class EvaluationError(AnisoError, ArithmeticError):
    def __init__(self, message: str, sample=None):
        super().__init__(message)
        self.sample = sample


class SamplingError(AnisoError, ValueError):
    def __init__(self, message: str, location=None):
        super().__init__(message)
        self.location = location


class ParseError(AnisoError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class UnderResolvedError(AnisoError, ValueError):
    pass


class GridMismatchError(InvalidArgumentError):
    pass


class ConfigError(AnisoError, ValueError):
    pass


class OutputPathError(AnisoError, PermissionError):
    pass
