"""Exception types shared across the package."""


class LcswitchError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(LcswitchError):
    """A physical or configuration parameter is out of its valid range."""


class CapacityError(LcswitchError):
    """Requested Hilbert-space dimension exceeds the configured limit."""


class DimensionMismatchError(LcswitchError):
    """State and operator dimensions are incompatible."""


class StiffnessError(LcswitchError):
    """Adaptive integrator underflowed its step size."""


class StepError(LcswitchError):
    """Stochastic propagator could not satisfy the jump-probability cap."""


class AttractorNotFoundError(LcswitchError):
    """No dynamical attractor was found at the requested working point."""


class DegenerateClusterError(LcswitchError):
    """Clustering input is degenerate (all observations identical)."""


class NumericalError(LcswitchError):
    """Non-finite quantity encountered during an iterative computation."""


class FitRefusedError(LcswitchError):
    """Too few records to attempt a statistical fit."""


class FitConvergenceError(LcswitchError):
    """Nonlinear fit failed to converge from every initialization."""


class NoLinearTailError(LcswitchError):
    """No exponential tail could be identified in a survival curve."""


class DegenerateHazardError(LcswitchError):
    """Every phase bin of a hazard profile was masked."""


class IntegrityError(LcswitchError):
    """A stored artifact does not match its recorded checksum."""


class ConfigError(LcswitchError):
    """Run configuration is invalid."""


class StageFailureError(LcswitchError):
    """A pipeline stage failed; partial results were kept."""
