"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`BoundsError`
so callers (and the CLI exit-code mapping) can catch them in one place.
"""


class BoundsError(Exception):
    """Base class for all package errors."""


class ValidationError(BoundsError, ValueError):
    """Inputs violate a documented precondition."""


class RankDeficient(ValidationError):
    """Constraint matrix does not have full row rank."""


class SizeCap(ValidationError):
    """Requested problem exceeds the supported size."""


class TooLargeForEnumeration(ValidationError):
    """Basis enumeration requested beyond the size cap."""


class PropensityUnderflow(ValidationError):
    """A propensity (or instrument probability) is below the clipping floor."""


class InvalidLambdaUtility(ValidationError):
    """Power-law parameter <= 0 combined with a zero utility level."""


class MarginMismatch(ValidationError):
    """Sinkhorn margins are not compatible probability vectors."""


class SolverFailure(BoundsError):
    """A numerical solver failed.

    ``index`` carries the offending observation when raised from batched code.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MaxPivotsExceeded(SolverFailure):
    """The simplex pivot limit was reached (cycling safeguard)."""


class SingularBasis(SolverFailure):
    """The basis submatrix is not invertible."""


class UnboundedProblem(SolverFailure):
    """A conditional LP is unbounded."""


class NotStrictlyFeasible(SolverFailure):
    """The constraint vector lies on the boundary of the feasibility cone."""


class NewtonStalled(SolverFailure):
    """Damped Newton iterations failed to make progress."""


class IllConditioned(SolverFailure):
    """The dual Hessian A diag(p) A' is too ill-conditioned to invert."""


class AllInfeasible(SolverFailure):
    """No observation produced a feasible conditional LP."""


class DegenerateDesign(BoundsError):
    """Second-stage regression design is singular."""


class GradientCheckFailed(BoundsError):
    """Analytic policy gradient disagrees with finite differences."""


class NonFiniteObjective(BoundsError):
    """A policy objective evaluated to NaN or infinity."""
