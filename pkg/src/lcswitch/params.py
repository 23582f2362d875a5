"""Physical parameters, fluctuation-strength scaling, and Fock-space cutoffs.

The model is a coherently driven optical mode coupled by radiation pressure to
a damped mechanical mode.  All rates are quoted in units where the bare
mechanical frequency is order one.  The dimensionless parameter ``aleph``
tunes the strength of quantum fluctuations: mode populations grow like
``aleph`` while the deterministic flow of the rescaled amplitudes
(alpha/sqrt(aleph), beta/sqrt(aleph)) stays fixed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import CapacityError, InvalidParameterError

#: Default working point: inside the region where two stable limit cycles coexist.
WORKING_POINT = dict(
    delta_a=-0.7, omega_b=1.0, g=0.35, f=0.2, kappa_a=0.1, kappa_b=0.01
)


@dataclass(frozen=True)
class SystemParams:
    """Bare model parameters (tilde-scale convention for ``g`` and ``f``).

    Attributes
    ----------
    delta_a : float
        Optical detuning (drive frame).
    omega_b : float
        Mechanical frequency, must be positive.
    g : float
        Single-photon optomechanical coupling.
    f : float
        Coherent drive amplitude.
    kappa_a : float
        Optical decay rate, must be positive.
    kappa_b : float
        Mechanical decay rate, non-negative.
    """

    delta_a: float
    omega_b: float
    g: float
    f: float
    kappa_a: float
    kappa_b: float

    def __post_init__(self):
        if not self.kappa_a > 0:
            raise InvalidParameterError(f"kappa_a must be > 0, got {self.kappa_a}")
        if self.kappa_b < 0:
            raise InvalidParameterError(f"kappa_b must be >= 0, got {self.kappa_b}")
        if not self.omega_b > 0:
            raise InvalidParameterError(f"omega_b must be > 0, got {self.omega_b}")

    @classmethod
    def working_point(cls, **overrides) -> "SystemParams":
        kw = dict(WORKING_POINT)
        kw.update(overrides)
        return cls(**kw)


class Scheme(enum.Enum):
    """How ``aleph`` is folded into the microscopic parameters.

    THEORY_A rescales drive and coupling (F -> sqrt(aleph) F, g -> g / sqrt(aleph))
    and leaves detuning, frequencies and decay rates untouched.  ADJOINT_B keeps
    the coupling g fixed (it is set by device fabrication) and instead rescales
    detuning, frequencies, decay rates by sqrt(aleph) and the drive by aleph,
    and times must then be reported as t' = sqrt(aleph) * t.
    """

    THEORY_A = "a"
    ADJOINT_B = "b"


@dataclass(frozen=True)
class ScalingPlan:
    """Fluctuation-strength scaling applied to a set of base parameters."""

    aleph: float
    scheme: Scheme
    base: SystemParams

    def __post_init__(self):
        if not self.aleph > 0:
            raise InvalidParameterError(f"aleph must be > 0, got {self.aleph}")


@dataclass(frozen=True)
class ResolvedParams:
    """Microscopic parameters with scaling applied.

    ``time_scale`` is the factor converting simulation time to reported time
    (1 for the theory scaling, sqrt(aleph) for the adjoint scaling).
    """

    params: SystemParams
    aleph: float
    scheme: Scheme
    time_scale: float


def resolve_params(plan: ScalingPlan) -> ResolvedParams:
    """Apply the scaling prescription of ``plan`` to its base parameters.

    Theory scaling (scheme A): F = sqrt(aleph) * F~, g = g~ / sqrt(aleph),
    everything else unchanged, and time is unscaled.  Adjoint scaling
    (scheme B): detuning, mechanical frequency and both decay rates are
    multiplied by sqrt(aleph), F = aleph * F~, g unchanged, and recorded
    times must be multiplied by sqrt(aleph).
    """
    if not plan.aleph > 0:
        raise InvalidParameterError(f"aleph must be > 0, got {plan.aleph}")
    b = plan.base
    root = math.sqrt(plan.aleph)
    if plan.scheme is Scheme.THEORY_A:
        p = SystemParams(
            delta_a=b.delta_a,
            omega_b=b.omega_b,
            g=b.g / root,
            f=b.f * root,
            kappa_a=b.kappa_a,
            kappa_b=b.kappa_b,
        )
        return ResolvedParams(params=p, aleph=plan.aleph, scheme=plan.scheme, time_scale=1.0)
    p = SystemParams(
        delta_a=root * b.delta_a,
        omega_b=root * b.omega_b,
        g=b.g,
        f=plan.aleph * b.f,
        kappa_a=root * b.kappa_a,
        kappa_b=root * b.kappa_b,
    )
    return ResolvedParams(params=p, aleph=plan.aleph, scheme=plan.scheme, time_scale=root)


#: Hard ceiling on the product-basis dimension unless the caller raises it.
DEFAULT_MAX_DIM = 250_000


@dataclass(frozen=True)
class FockCutoffs:
    """Truncation of the two-mode Fock space.

    The product basis |n_a, n_b> keeps n_a in [0, n_a_max] and n_b in
    [0, n_b_max]; its dimension is (n_a_max + 1) * (n_b_max + 1).
    """

    n_a_max: int
    n_b_max: int
    max_dim: int = DEFAULT_MAX_DIM

    def __post_init__(self):
        if self.n_a_max < 1 or self.n_b_max < 1:
            raise InvalidParameterError(
                f"cutoffs must be >= 1, got ({self.n_a_max}, {self.n_b_max})"
            )
        if self.dim > self.max_dim:
            raise CapacityError(
                f"basis dimension {self.dim} exceeds limit {self.max_dim}"
            )

    @property
    def dim(self) -> int:
        return (self.n_a_max + 1) * (self.n_b_max + 1)


def suggest_cutoffs(
    aleph: float,
    peak_pop_a: float,
    peak_pop_b: float,
    factor: float = 4.0,
    max_dim: int = DEFAULT_MAX_DIM,
) -> FockCutoffs:
    """Cutoff heuristic from peak rescaled populations of the larger cycle.

    ``peak_pop_a/b`` are the maxima of the rescaled populations along the
    large-amplitude deterministic orbit; physical populations are ``aleph``
    times larger.  Each cutoff is at least ``factor`` times the physical peak.
    A convergence check (doubling the cutoffs) is still recommended; see
    :func:`lcswitch.qjump.convergence_check`.
    """
    n_a = max(4, math.ceil(factor * aleph * peak_pop_a))
    n_b = max(4, math.ceil(factor * aleph * peak_pop_b))
    return FockCutoffs(n_a_max=n_a, n_b_max=n_b, max_dim=max_dim)
