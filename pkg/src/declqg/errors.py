"""Exception types raised across the package."""

from __future__ import annotations


class DeclqgError(Exception):
    """Base class for all package errors."""


class ValidationError(DeclqgError):
    """A problem instance violates one or more standing assumptions.

    ``violations`` holds every violation found, not only the first one.
    """

    def __init__(self, message: str, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class DimensionError(ValidationError):
    pass


class StructureError(ValidationError):
    pass


class DefinitenessError(ValidationError):
    pass


class ParseError(DeclqgError):
    pass


class SchemaError(DeclqgError):
    pass


class SingularInnovation(DeclqgError):
    pass


class SingularHessian(DeclqgError):
    pass


class EliminationSingular(DeclqgError):
    def __init__(self, message: str, t: int):
        super().__init__(message)
        self.t = t


class PivotFailure(DeclqgError):
    def __init__(self, message: str, block: int):
        super().__init__(message)
        self.block = block


class ConsistencyError(DeclqgError):
    pass


class HorizonExceeded(DeclqgError):
    pass


class IllConditioned(UserWarning):
    """Normal equations of the disturbance-feedback program are badly conditioned."""
