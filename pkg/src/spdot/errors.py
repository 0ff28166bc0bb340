"""Exception types shared across the package."""


class SpdotError(Exception):
    """Base class for all package errors."""


class InvalidInput(SpdotError):
    """Malformed or inconsistent input (shape mismatch, non-finite entries, ...)."""


class NotPositiveDefinite(SpdotError):
    """A matrix required to be SPD has an eigenvalue at or below the floor."""


class NotConverged(SpdotError):
    """An iterative balancing routine hit its iteration cap.

    Carries the iteration count and the final constraint gap so callers can
    decide whether the instance is (near-)infeasible.
    """

    def __init__(self, iterations, final_gap, message=None):
        self.iterations = iterations
        self.final_gap = final_gap
        super().__init__(
            message
            or f"no convergence after {iterations} iterations (gap {final_gap:.3e})"
        )


class ProjectionFailed(SpdotError):
    """The tangent-projection linear system was too ill-conditioned to trust."""

    def __init__(self, condition, message=None):
        self.condition = condition
        super().__init__(
            message or f"projection system ill-conditioned (cond ~ {condition:.3e})"
        )


class FeasibilityUnknown(SpdotError):
    """Balancing from the canonical seed failed, so feasibility is undecided."""


class InnerSolveFailed(SpdotError):
    """An inner transport solve inside an outer loop did not reach its tolerance."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"inner solve {index} failed")


class ProblemFormatError(InvalidInput):
    """A problem/result file does not match the v1 schema."""
