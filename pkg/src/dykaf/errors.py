"""Exception and warning types raised across the package."""


class DykafError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(DykafError, ValueError):
    pass


class SizeCapExceeded(DykafError, ValueError):
    """A dense object would exceed the configured entry cap."""


class NegativeBase(DykafError, ValueError):
    """Fractional Hadamard power of a negative entry."""


class DivisionUnderflow(DykafError, ZeroDivisionError):
    """Elementwise division by an entry below the division floor."""


class RankCollapse(DykafError, ArithmeticError):
    """A QR step produced a (numerically) zero column."""


class NonPositiveS(DykafError, ArithmeticError):
    """The core scalar of a Kronecker projector-splitting step is not positive.

    ``clamped`` carries the result computed with the scalar clamped at the
    floor, so a caller may recover instead of aborting.
    """

    def __init__(self, message, clamped=None):
        super().__init__(message)
        self.clamped = clamped


class ZeroFactor(DykafError, ArithmeticError):
    pass


class ZeroGradient(DykafError, ValueError):
    pass


class ParseError(DykafError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class EmptyFile(DykafError, ValueError):
    pass


class DatasetUnavailable(DykafError, FileNotFoundError):
    pass


class NonConvergenceWarning(RuntimeWarning):
    """An iterative method stopped at ``max_iters`` without meeting ``tol``."""
