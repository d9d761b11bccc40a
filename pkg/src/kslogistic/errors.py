"""Exception types shared across the solver, particle system and harness."""


class KsError(Exception):
    """Base class for all package errors."""


class SingularOrigin(KsError):
    """Coulomb kernel evaluated at (or too close to) the origin."""


class ResolutionTooCoarse(KsError):
    """Grid spacing does not resolve the mollifier support."""


class GridMismatch(KsError):
    """Two fields do not share the same grid geometry."""


class TimeStepTooLarge(KsError):
    """Requested time step exceeds the stability heuristic."""


class NumericalBlowup(KsError):
    """Solver produced non-finite values (a failure, not a detected model blow-up)."""


class BlowupTrajectory(KsError):
    """Operation requires a trajectory on which the blow-up monitor stayed silent."""


class PopulationExplosion(KsError):
    """Number of alive particles exceeded the configured hard cap."""


class UnboundedSupport(KsError):
    """Measure carries non-negligible mass outside the computational box."""


class AssumptionViolated(KsError):
    """Parameters violate the convergence-rate assumptions; names the failed inequality."""


class DegenerateFit(KsError):
    """Slope fit impossible (non-positive errors or too few points)."""


class ConfigError(KsError):
    """Malformed or inconsistent run configuration."""
