"""
errors.py — Exception types shared by the services.

Each class also derives from the closest builtin so that callers catching
ValueError / RuntimeError keep working.
"""

from typing import Any, Optional, Sequence, Tuple


class LabError(Exception):
    """Base class for every error raised by lawson_lab."""


class DomainError(LabError, ValueError):
    """A precondition on the inputs of an operation does not hold."""


class ConfigError(LabError, ValueError):
    pass


class DegenerateGeometryError(LabError, ArithmeticError):
    def __init__(self, message: str, location: Optional[Tuple[float, ...]] = None):
        if location is not None:
            message = f"{message} at {tuple(float(c) for c in location)}"
        super().__init__(message)
        self.location = location


class NonFiniteSampleError(DegenerateGeometryError):
    pass


class AmbiguousRankError(LabError, RuntimeError):
    def __init__(self, message: str, singular_values: Sequence[float]):
        super().__init__(message)
        self.singular_values = list(singular_values)


class ConvergenceError(LabError, RuntimeError):
    def __init__(self, message: str, best: Any = None):
        super().__init__(message)
        self.best = best
