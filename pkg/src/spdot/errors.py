class SpdotError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(SpdotError, ValueError):
    pass


class SpdDomainError(SpdotError, ValueError):
    """A matrix is not symmetric, not positive definite, or otherwise outside a function's domain."""


class NumericalError(SpdotError, ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


class InfeasibleError(SpdotError, ValueError):
    """Transport marginals do not describe a feasible problem."""


class DatasetFormatError(SpdotError, ValueError):
    pass
