"""Exception types shared across triload modules."""


class TriloadError(Exception):
    """Base class for triload errors."""


class OutsideTriangleError(TriloadError):
    """Point lies outside the closed triangle beyond tolerance."""


class OutOfRangeError(TriloadError):
    """Scalar parameter outside its documented range."""


class DegenerateConeError(TriloadError):
    """Cone shift puts the three boundary rays out of circular order."""


class LengthMismatchError(TriloadError):
    """Assignment length does not match the instance size."""


class TooLargeError(TriloadError):
    """Instance exceeds the solver's size cap."""


class SolverStallError(TriloadError):
    """Iterative solver failed to converge within its iteration cap."""


class NonTerminationError(TriloadError):
    """Boundary-sweep recursion exceeded its proven step bound.

    Carries the partial trace for debugging; this indicates a contract
    violation, not a recoverable condition.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class TieDetectedError(TriloadError):
    """Two allocation costs compare exactly equal where a.s. they should not."""


class InvalidParamsError(TriloadError):
    """Cost-model parameters violate a constructor constraint."""


class OverflowGuardError(TriloadError):
    """Exponential-moment request exceeds the overflow guard."""


class BudgetExceededError(TriloadError):
    """Adaptive integrator exceeded its subdivision budget."""


class OutOfDomainError(TriloadError):
    """Requested value lies outside the open domain of the root solve."""


class BracketCapReachedError(TriloadError):
    """Root bracket expansion hit the tilt-parameter cap near a domain endpoint."""


class EnvelopeError(TriloadError):
    """Rejection-sampling envelope was exceeded; the certified sup is wrong."""


class InsufficientTailHitsError(TriloadError):
    """Too few usable tail estimates to fit a decay slope."""
