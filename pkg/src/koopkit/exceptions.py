"""Exception and warning classes raised by :mod:`koopkit`."""


class KoopkitError(Exception):
    """Base class for all errors raised by this package."""


class NumericFailureError(KoopkitError, ArithmeticError):
    """A numeric kernel failed to converge or overflowed."""


class InstabilityError(KoopkitError):
    """A stability-dependent construction was requested for an unstable spectrum.

    Attributes
    ----------
    eigenvalue : complex or None
        Offending eigenvalue (largest modulus / real part), if known.
    """

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class InsufficientDataError(KoopkitError, ValueError):
    """Too few samples for the requested operation."""


class ShapeError(KoopkitError, ValueError):
    """Array shapes are inconsistent with the requested operation."""


class ValidationError(KoopkitError, ValueError):
    """Invalid parameter or failed construction-time contract check."""


class DivergenceError(KoopkitError):
    """A simulation produced a non-finite state.

    Attributes
    ----------
    last_valid_time : float
        Time of the last finite sample.
    """

    def __init__(self, message, last_valid_time):
        super().__init__(message)
        self.last_valid_time = last_valid_time


class KoopkitWarning(UserWarning):
    """Base class for warnings issued by this package."""


class InsufficientDataWarning(KoopkitWarning):
    """Regression matrix is rank deficient; the fit is not unique."""


class PoorConjugacyWarning(KoopkitWarning):
    """Conjugacy residual exceeds tolerance (resonant or unstable linear part)."""


class SpanDeficiencyWarning(KoopkitWarning):
    """Lie derivatives of the control fields are not in the lifting span."""


class ConvergenceWarning(KoopkitWarning):
    """Iterative solver stopped at its iteration budget."""


class ParseError(KoopkitError, ValueError):
    """A data or model file could not be read."""
