"""Exception types shared by all solver modules."""


class GpobError(Exception):
    """Base class for solver failures."""


class NonConvergence(GpobError):
    """An iterative method ran out of iterations.

    Carries the iteration count and the last residual norm so callers can
    decide whether to retry with a smaller step or give up.
    """

    def __init__(self, iterations, final_residual, msg=""):
        self.iterations = iterations
        self.final_residual = final_residual
        super().__init__(
            msg or f"no convergence after {iterations} iterations "
                   f"(residual {final_residual:.3e})")


class SingularPreconditioner(GpobError):
    """Incomplete factorization broke down (zero/tiny pivot)."""


class LinearSolveFailure(GpobError):
    """A linear solve inside an outer iteration failed."""


class LineSearchStall(GpobError):
    """Backtracking reached the minimum damping without residual decrease."""

    def __init__(self, iterations, residual, msg=""):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            msg or f"line search stalled at iteration {iterations} "
                   f"(residual {residual:.3e})")


class SeedFailure(GpobError):
    """The first solve of a continuation run failed."""


class NewtonFailure(NonConvergence):
    """Newton iteration failed inside a PDE solver."""


class BadGeometry(GpobError):
    """Grid construction parameters are geometrically inconsistent."""


class EllipticityLoss(GpobError):
    """A flow iterate left the subsonic region max |grad Phi|^2 < 1/3."""

    def __init__(self, max_speed2, msg=""):
        self.max_speed2 = max_speed2
        super().__init__(
            msg or f"flux ellipticity lost: max |grad Phi|^2 = {max_speed2:.4f} >= 1/3")


class UnderResolved(GpobError):
    """The grid does not resolve the requested boundary-layer width."""


class DomainError(GpobError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class VortexContamination(GpobError):
    """A polish step left the vortex-free basin (modulus dipped too low)."""


class VortexEscape(GpobError):
    """A traveling-wave solve collapsed to the constant state."""


class SpeedOutOfRange(GpobError):
    """Requested local speed is at or beyond sqrt(2) (supersonic point)."""


class GramSingular(GpobError):
    """Projection Gram matrix is numerically singular."""


class InsufficientRange(GpobError):
    """Far field too short for a meaningful decay fit."""


class AmbiguousCore(GpobError):
    """|field| vanishes on a plaquette corner; winding undefined there."""


class EigenIterationFailure(GpobError):
    """Inverse iteration for the constrained singular value did not settle."""


class MissingArtifact(GpobError):
    """A pipeline stage requires an artifact that is absent or unreadable."""
