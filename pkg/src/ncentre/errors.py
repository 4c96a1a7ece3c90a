"""Exception types shared across the package."""


class NCentreError(Exception):
    """Base class for all domain errors."""


class CollisionPoint(NCentreError):
    """Potential evaluated at (or too close to) a centre."""


class InvalidEps(NCentreError):
    """Scaling parameter outside its admissible range."""


class NoAdmissibleRadius(NCentreError):
    """Grid verification of the working-sphere inclusions failed."""


class CollisionApproach(NCentreError):
    """Integration came within the collision guard of a centre."""

    def __init__(self, t, centre):
        super().__init__(f"collision approach at t={t:.6g} near centre {centre}")
        self.t = t
        self.centre = centre


class StepSizeUnderflow(NCentreError):
    """The adaptive integrator could not continue."""


class NoReturn(NCentreError):
    """The trajectory did not re-attain the sphere before t_max."""

    def __init__(self, t_max):
        super().__init__(f"no return to the sphere before t={t_max:.6g}")
        self.t_max = t_max


class Escape(NCentreError):
    """The trajectory left the escape radius."""


class OutsideHill(NCentreError):
    """Requested configuration lies outside the Hill region."""


class SingularBVP(NCentreError):
    """Fundamental-solution endpoint matrix is numerically singular."""


class HillBoundary(NCentreError):
    """McGehee integration reached the Hill boundary."""


class NewtonDiverged(NCentreError):
    """Shooting iteration failed to converge."""

    def __init__(self, iters, residual):
        super().__init__(f"shooting diverged after {iters} steps, residual {residual:.3g}")
        self.iters = iters
        self.residual = residual


class OutsideNeighbourhood(NCentreError):
    """Endpoint outside the admissible neighbourhood of a central configuration."""


class AmbiguousWinding(NCentreError):
    """A path segment passes too close to a centre to wind unambiguously."""


class ConstructionFailed(NCentreError):
    """Could not construct a representative path in the requested class."""


class NotConverged(NCentreError):
    """Iterative minimization stopped before reaching its tolerance."""


class ConstraintBroken(NCentreError):
    """Topological constraint could not be preserved along the descent."""


class CollisionDetected(NCentreError):
    """A constrained minimizer approached a centre below the separation threshold."""


class BoundaryMinimum(NCentreError):
    """Junction minimization converged to the edge of the angle box."""


class UnclassifiableCrossing(NCentreError):
    """A sphere crossing could not be assigned a symbol."""


class AmbiguousInnerClass(NCentreError):
    """An inner excursion does not fall in a recognised homotopy class."""


class SemiconjugacyFailure(NCentreError):
    """Commutation of shift and first-return reading failed."""

    def __init__(self, k, detail=""):
        super().__init__(f"semi-conjugacy failed at rotation {k}: {detail}")
        self.k = k


class InvariantViolation(NCentreError):
    """A constructed object failed one of its post-condition checks."""


class DegenerateConfiguration(UserWarning):
    """A critical angle with |U''| below the classification tolerance."""
