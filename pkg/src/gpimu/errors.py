"""Exception types raised across the package."""


class GpImuError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(GpImuError, ArithmeticError):
    """A matrix (or pivot block) that must be SPD failed Cholesky."""

    def __init__(self, message="matrix is not positive definite", block=None):
        if block is not None:
            message = f"{message} (pivot block {block})"
        super().__init__(message)
        self.block = block


class DimensionMismatch(GpImuError, ValueError):
    pass


class InvalidInterval(GpImuError, ValueError):
    pass


class InvalidGrid(GpImuError, ValueError):
    pass


class MeasurementOffGrid(GpImuError, ValueError):
    pass


class OutOfSpan(GpImuError, ValueError):
    pass


class EmptyWindow(GpImuError, ValueError):
    pass


class GraphMismatch(GpImuError, ValueError):
    pass


class DegenerateData(GpImuError, ValueError):
    pass


class NonFiniteObjective(GpImuError, ArithmeticError):
    pass


class SingularCovariance(GpImuError, ArithmeticError):
    pass
