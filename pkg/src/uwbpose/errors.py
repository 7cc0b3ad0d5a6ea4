"""Exception types raised across the package."""


class UwbPoseError(Exception):
    """Base class for all package errors."""


class NonSkewInput(UwbPoseError, ValueError):
    pass


class NotARotation(UwbPoseError, ValueError):
    pass


class DegenerateSimplex(UwbPoseError, ValueError):
    pass


class NoCoplanarPlane(UwbPoseError):
    """Anchors are not coplanar, so no mirror ambiguity exists."""


class NoMirrorPose(UwbPoseError):
    """The mirror image of the tags is not reachable by a proper rigid motion."""


class DegenerateGeometry(UwbPoseError, ValueError):
    pass


class DegenerateLayout(UwbPoseError, ValueError):
    pass


class CollinearPoints(UwbPoseError, ValueError):
    pass


class DidNotConverge(UwbPoseError):
    """Iteration cap or damping limit reached with the gradient above tolerance.

    ``estimate`` carries the last iterate so callers can still report it.
    """

    def __init__(self, message: str, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class ZeroRange(UwbPoseError, ValueError):
    pass


class RankDeficient(UwbPoseError):
    """The Fisher information is singular; ``direction`` spans its null space."""

    def __init__(self, message: str, direction=None):
        super().__init__(message)
        self.direction = direction


class AssumptionViolated(UwbPoseError, ValueError):
    pass


class TooManyFailures(UwbPoseError):
    pass


class DegenerateFit(UwbPoseError, ValueError):
    pass


class TargetInfeasible(UwbPoseError):
    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class LowCorrelation(UwbPoseError):
    def __init__(self, message: str, pearson_r=None):
        super().__init__(message)
        self.pearson_r = pearson_r
