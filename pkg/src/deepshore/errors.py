"""Exception types shared across the package."""


class DeepShoreError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(DeepShoreError, ValueError):
    """An argument violates a documented precondition."""


class SingularSystemError(DeepShoreError):
    """A linear system is singular or too ill-conditioned to solve reliably."""


class UndefinedCorrelationError(DeepShoreError):
    """Angular correlation is undefined because one side has no anisotropic content."""


class SaturationError(DeepShoreError, OverflowError):
    """Exponential restore would overflow double precision."""


class OptimizationFailureError(DeepShoreError):
    """Scale optimization hit a non-finite objective.

    Carries the last iterate that still evaluated to a finite objective.
    """

    def __init__(self, message, zeta=None, objective=None):
        super().__init__(message)
        self.zeta = zeta
        self.objective = objective


class ContainerFormatError(DeepShoreError):
    """A container file is malformed or inconsistent with its header."""
