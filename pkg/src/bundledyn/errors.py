"""Exception types raised across the package."""

from __future__ import annotations


class BundleError(Exception):
    """Base class for all package errors."""


class InvalidInputError(BundleError, ValueError):
    pass


class InvalidParameterError(BundleError, ValueError):
    pass


class SingularMetricError(BundleError, ArithmeticError):
    pass


class DomainError(BundleError, ValueError):
    """State lies outside the working region."""


class DegenerateStructureError(BundleError, ArithmeticError):
    pass


class InsufficientSamplesError(BundleError, ValueError):
    pass


class ProjectionFailureError(BundleError, ArithmeticError):
    pass


class ProjectionNonConvergenceError(ProjectionFailureError):
    def __init__(self, message: str, best_state=None, iterations: int = 0):
        super().__init__(message)
        self.best_state = best_state
        self.iterations = iterations


class StepFailureError(BundleError, RuntimeError):
    def __init__(self, message: str, diagnostics=None, trajectory=None):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.trajectory = trajectory
