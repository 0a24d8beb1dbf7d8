"""Exception hierarchy shared by all pipeline stages."""


class KSDLabError(Exception):
    """Base class for all package errors."""


class DomainError(KSDLabError):
    """Parameters outside the admissible range (e.g. mu >= 1/3)."""


class RecurrenceDegenerate(KSDLabError):
    """A recurrence denominator vanished at an off-resonance index."""


class NoConvergence(KSDLabError):
    """Series ratio test failed to certify the target tolerance."""


class RegionExitScenario1(KSDLabError):
    """Trajectory crossed f = Q/3 (numerical failure; excluded analytically)."""


class RegionExitScenario2(KSDLabError):
    """Q crossed zero before f (numerical failure; excluded analytically)."""


class StepSizeUnderflow(KSDLabError):
    """Integrator step collapsed near the handoff (beta - f ~ 0)."""


class OutOfRange(KSDLabError):
    """Query point outside the sampled grid."""


class NoAdmissibleA(KSDLabError):
    """Weight exponent scan exceeded its cap without passing certificates."""


class GridMismatch(KSDLabError):
    """Sampled functions live on different grids."""


class DivergentIntegrand(KSDLabError):
    """Vanishing order too low for the singular weight."""


class OrderUnsupported(KSDLabError):
    """Sobolev probe order outside the implemented range."""


class CFLViolation(KSDLabError):
    """Requested time step violates the stability bound."""


class NonFiniteField(KSDLabError):
    """NaN or Inf appeared in an evolved field."""


class IllConditionedFit(KSDLabError):
    """Mode-extraction design matrix condition number too large."""


class ForcingDominates(KSDLabError):
    """Diffusive forcing swamps the modal derivative in a rate fit."""


class NoBlowupDetected(KSDLabError):
    """Sup-norm plateaued before reaching the stopping threshold."""


class ResolutionExhausted(KSDLabError):
    """Half-maximum radius fell below the resolvable cell count."""


class SnapshotMismatch(KSDLabError):
    """Snapshots incompatible for the rescaling check."""


class ConfigParseError(KSDLabError):
    """Run configuration could not be parsed or validated."""


class StageFailure(KSDLabError):
    """A pipeline stage failed; wraps the originating module error."""
