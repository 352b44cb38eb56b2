"""Exception hierarchy shared by all nlfit modules."""


class NlfitError(Exception):
    """Base class for every error raised by the package."""


class NonFiniteEvaluation(NlfitError, ValueError):
    """A mean-function evaluation produced NaN or infinity."""


class DomainViolation(NonFiniteEvaluation):
    """(theta, x) lies outside a model's valid domain.

    Subclasses :class:`NonFiniteEvaluation` because every domain violation in
    the catalog is a point where the mean function is singular or undefined.
    """


class NotAvailable(NlfitError):
    """Analytic second derivatives are not provided by a model."""


class SingularNormalEquations(NlfitError):
    """J'J is numerically singular; Levenberg-Marquardt is the usual remedy."""


class LineSearchFailed(NlfitError):
    """Step halving (or LM damping) could not produce a decrease in S."""


class NotConverged(NlfitError):
    """An operation required a converged fit."""


class SingularInformation(NlfitError):
    """The information matrix J'J (or its inverse) is not usable."""


class SingularJacobian(NlfitError):
    """The R factor of the Jacobian QR decomposition is not invertible."""


class GridTooCoarse(NlfitError):
    """No crossing of the region threshold was found on the contour grid."""


class SingularWeightedSystem(NlfitError):
    """X'WX is numerically singular during IRLS."""


class SeparationWarning(UserWarning):
    """Fitted logits diverge, which indicates (quasi-)complete separation."""


class DegenerateWeights(NlfitError):
    """A refreshed GLS weight is zero, negative or non-finite."""


class EmptyNeighborhood(NlfitError):
    """A compact kernel has no data point within the bandwidth."""


class ZeroAcceptance(NlfitError):
    """A Metropolis chain accepted no proposal after burn-in."""


class TooManyFailures(NlfitError):
    """More than the allowed fraction of Monte Carlo fits failed."""


class DataError(NlfitError, ValueError):
    """Dataset contents violate the Dataset invariants."""


class IoError(DataError):
    """An input file is missing, unreadable or has no observations."""


class ParseError(DataError):
    """A CSV cell could not be parsed; ``line`` and ``column`` are 1-based."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(message)
        self.line = line
        self.column = column
