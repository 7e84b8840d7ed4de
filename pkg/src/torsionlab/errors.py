"""Exception hierarchy shared by all torsionlab modules."""


class TorsionLabError(Exception):
    """Base class for every error raised by this package."""


class BadSpec(TorsionLabError, ValueError):
    pass


class EmptyRaster(TorsionLabError, ValueError):
    pass


class RasterInfeasible(TorsionLabError, ValueError):
    pass


class GridMismatch(TorsionLabError, ValueError):
    pass


class SourceOutside(TorsionLabError, ValueError):
    pass


class NoConvergence(TorsionLabError, RuntimeError):
    """Iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class DegenerateSequence(TorsionLabError, ValueError):
    pass


class FitDegenerate(TorsionLabError, ValueError):
    pass


class OracleMismatch(TorsionLabError, RuntimeError):
    pass


class ConsistencyFailure(TorsionLabError, RuntimeError):
    pass


class UnsupportedDimension(TorsionLabError, ValueError):
    pass


class DomainError(TorsionLabError, ValueError):
    pass


class NotApplicable(TorsionLabError):
    """A check's hypotheses are not met by the domain (not a failure)."""

    def __init__(self, check_id, reason=""):
        super().__init__(f"{check_id}: {reason}" if reason else check_id)
        self.check_id = check_id
        self.reason = reason


class BadBoundaryPoint(TorsionLabError, ValueError):
    pass


class OracleViolation(TorsionLabError, AssertionError):
    def __init__(self, quantity, observed_error, tolerance):
        super().__init__(
            f"{quantity}: relative error {observed_error:.3e} exceeds {tolerance:.3e}")
        self.quantity = quantity
        self.observed_error = observed_error
        self.tolerance = tolerance
