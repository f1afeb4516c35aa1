"""Exception hierarchy shared across the package."""


class SSCNError(Exception):
    """Base class for all errors raised by :mod:`sscn`."""


class DomainError(SSCNError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NumericalError(SSCNError, ArithmeticError):
    """A numerical routine cannot deliver its accuracy contract."""


class FormatError(SSCNError, ValueError):
    """A file does not match the expected binary layout."""


class ResourceError(SSCNError, MemoryError):
    """A request would exceed a configured memory budget."""


class ConvergenceError(SSCNError, RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    Attributes
    ----------
    trace : list of float
        Loss values recorded up to the point of failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class GradientError(SSCNError, RuntimeError):
    """Back-propagation misuse or a non-finite gradient."""
