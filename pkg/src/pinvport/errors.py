"""Exception hierarchy shared by every module of the package."""


class PinvPortError(Exception):
    """Base class for all errors raised by :mod:`pinvport`."""


class ValidationError(PinvPortError, ValueError):
    """Input violates a documented invariant (shape, finiteness, sign)."""


class InsufficientDataError(ValidationError):
    """Too few observations for the requested estimate."""


class SchemaError(ValidationError):
    """A delimited input file does not follow the expected layout."""


class UnsupportedAspectRatioError(ValidationError):
    """N/T is too close to one for the asymptotic formulas."""


class ZeroSignalError(ValidationError):
    """Population mean carries no signal (theta = 0)."""


class NumericalError(PinvPortError, ArithmeticError):
    """A numerical procedure could not produce a trustworthy answer."""


class DegenerateCovarianceError(NumericalError):
    """Covariance (or residual variance) is numerically zero."""


class NonPositiveThetaError(NumericalError):
    """The squared-Sharpe estimate is not positive.

    The estimate is indistinguishable from noise; callers may fall back
    to the unnormalized direction.
    """

    def __init__(self, message, theta_hat=None):
        super().__init__(message)
        self.theta_hat = theta_hat


class SolverError(NumericalError):
    """An iterative solver failed to converge."""
