"""Event-conditioned escape geometry.

Trajectory segments are aligned on switching events (label flips that pass
minimum-dwell filters).  The switch time sits between the last sample of the
source basin and the first sample of the target basin; a lag of tau = 0
therefore addresses the last pre-switch sample, and positive lags address
post-switch samples.  From the aligned ensembles this module builds
phase-space snapshots, optical-phase histograms P(phi, tau), stationary
per-basin phase densities, and the stationary-occupancy-normalized escape
hazard h(phi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateHazardError, InvalidParameterError
from .hmm import LC1, LC2, StateSequence, run_length_encode
from .qjump import TrajectoryRecord

#: Default minimum dwell (units 1/kappa_a) in the source basin before a switch.
PRE_MIN_OVER_KAPPA = 15.0
#: Default post-switch minimum dwell for phase-space density analysis.
POST_MIN_DENSITY_OVER_KAPPA = 10.0
#: Default post-switch minimum dwell for phase-histogram analysis.
POST_MIN_PHASE_OVER_KAPPA = 2.0
#: Default phase resolution (5 degrees).
DEFAULT_PHASE_BINS = 72
#: Hazard bins are masked where the stationary density falls below this
#: fraction of the uniform density.
HAZARD_FLOOR_FRACTION = 1e-4


@dataclass(frozen=True)
class SwitchEvent:
    trajectory: int
    anchor_index: int  # sample index of the first target-basin sample
    t_switch: float  # midpoint between the two straddling samples
    direction: tuple[int, int]  # (source, target)
    pre_dwell: float
    post_dwell: float


DIRECTION_12 = (LC1, LC2)
DIRECTION_21 = (LC2, LC1)


def find_events(
    sequences: list[StateSequence],
    dt_sample: float,
    pre_min: float,
    post_min: float,
    direction: tuple[int, int] | None = None,
    t_offset: float = 0.0,
) -> list[SwitchEvent]:
    """Label flips whose surrounding dwells pass the minimum-dwell filters.

    ``t_offset`` is the absolute time of each sequence's first sample (label
    index 0), used to place ``t_switch`` on the record's time axis.
    Tightening either filter can only remove events.
    """
    if pre_min <= 0 or post_min <= 0:
        raise InvalidParameterError("dwell filters must be positive")
    events: list[SwitchEvent] = []
    for ti, seq in enumerate(sequences):
        runs = run_length_encode(seq.labels)
        for ri in range(1, len(runs)):
            start, length, state = runs[ri]
            prev_start, prev_len, prev_state = runs[ri - 1]
            if direction is not None and (prev_state, state) != direction:
                continue
            pre = prev_len * dt_sample
            post = length * dt_sample
            if pre < pre_min or post < post_min:
                continue
            events.append(
                SwitchEvent(
                    trajectory=ti,
                    anchor_index=start,
                    t_switch=t_offset + (start - 0.5) * dt_sample,
                    direction=(prev_state, state),
                    pre_dwell=pre,
                    post_dwell=post,
                )
            )
    return events


def _sample_index(event: SwitchEvent, tau: float, dt_sample: float) -> int:
    """Nearest sample to t_switch + tau; the tie at tau = 0 resolves to the
    last pre-switch sample."""
    return event.anchor_index - 1 + math.floor(tau / dt_sample + 0.5)


@dataclass(frozen=True)
class ConditionedDensity:
    tau: float
    x_edges: np.ndarray
    y_edges: np.ndarray
    values: np.ndarray
    n_events: int
    n_excluded: int


def conditioned_density(
    events: list[SwitchEvent],
    records: list[TrajectoryRecord],
    sequences: list[StateSequence],
    tau_snapshots: list[float],
    projection: str = "optical",
    bins: int = 64,
    ranges=None,
) -> list[ConditionedDensity]:
    """Event-conditioned phase-space snapshots at the requested lags.

    Lags address the nearest sample to ``t_switch + tau``; events whose
    record does not cover a lag are excluded from that snapshot (counted in
    ``n_excluded``).  Each snapshot is normalized as a 2-D density.
    """
    if not events:
        raise InvalidParameterError("no events supplied")
    if projection not in ("optical", "mechanical", "population"):
        raise InvalidParameterError(f"unknown projection {projection!r}")
    out = []
    dt = records[0].dt_sample
    for tau in tau_snapshots:
        xs, ys = [], []
        excluded = 0
        for ev in events:
            seq = sequences[ev.trajectory]
            rec = records[ev.trajectory]
            idx = _sample_index(ev, tau, dt) + seq.start_index
            if idx < 0 or idx >= rec.n_samples:
                excluded += 1
                continue
            if projection == "optical":
                xs.append(rec.alpha[idx].real)
                ys.append(rec.alpha[idx].imag)
            elif projection == "mechanical":
                xs.append(rec.beta[idx].real)
                ys.append(rec.beta[idx].imag)
            else:
                xs.append(rec.n_a[idx])
                ys.append(rec.n_b[idx])
        if not xs:
            raise InvalidParameterError(f"no events cover tau={tau}")
        hist, xe, ye = np.histogram2d(xs, ys, bins=bins, range=ranges, density=True)
        out.append(
            ConditionedDensity(
                tau=tau, x_edges=xe, y_edges=ye, values=hist,
                n_events=len(xs), n_excluded=excluded,
            )
        )
    return out


def wrap_phase(z: np.ndarray | complex) -> np.ndarray | float:
    """arg(z) wrapped to [0, 2 pi)."""
    return np.mod(np.angle(z), 2.0 * np.pi)


@dataclass(frozen=True)
class PhaseHistogram:
    """P(phi, tau | source -> target) on a (lag x phase) grid.

    ``values[i, j]`` is the density in phase bin j at lag tau[i]; every lag
    row with support integrates to one over phase.
    """

    tau: np.ndarray
    phase_edges: np.ndarray
    values: np.ndarray  # (n_tau, n_bins)
    counts: np.ndarray  # events contributing per lag
    direction: tuple[int, int]

    @property
    def bin_width(self) -> float:
        return float(self.phase_edges[1] - self.phase_edges[0])

    def column(self, tau: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.tau - tau)))
        return self.values[i]


def phase_histogram(
    events: list[SwitchEvent],
    records: list[TrajectoryRecord],
    sequences: list[StateSequence],
    direction: tuple[int, int],
    tau_range: tuple[float, float] | None = None,
    phase_bins: int = DEFAULT_PHASE_BINS,
    kappa_a: float | None = None,
) -> PhaseHistogram:
    """Event-conditioned distribution of the optical phase versus lag.

    The lag grid is the sampling grid restricted to ``tau_range`` (default
    [-15, +10] / kappa_a, requiring ``kappa_a``).
    """
    events = [ev for ev in events if ev.direction == direction]
    if not events:
        raise InvalidParameterError("no events for the requested direction")
    dt = records[0].dt_sample
    if tau_range is None:
        if kappa_a is None:
            raise InvalidParameterError("need kappa_a to build the default lag range")
        tau_range = (-15.0 / kappa_a, 10.0 / kappa_a)
    lo = math.ceil(tau_range[0] / dt)
    hi = math.floor(tau_range[1] / dt)
    tau = np.arange(lo, hi + 1) * dt
    edges = np.linspace(0.0, 2.0 * np.pi, phase_bins + 1)
    values = np.zeros((len(tau), phase_bins))
    counts = np.zeros(len(tau), dtype=int)
    for ev in events:
        seq = sequences[ev.trajectory]
        rec = records[ev.trajectory]
        base = ev.anchor_index - 1 + seq.start_index
        idx = base + np.round(tau / dt).astype(int)
        ok = (idx >= 0) & (idx < rec.n_samples)
        phases = wrap_phase(rec.alpha[idx[ok]])
        rows = np.nonzero(ok)[0]
        cols = np.minimum((phases / (2.0 * np.pi) * phase_bins).astype(int), phase_bins - 1)
        np.add.at(values, (rows, cols), 1.0)
        counts[ok] += 1
    width = edges[1] - edges[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        values = values / (counts[:, None] * width)
    values[counts == 0] = 0.0
    return PhaseHistogram(
        tau=tau, phase_edges=edges, values=values, counts=counts, direction=direction
    )


@dataclass(frozen=True)
class PhaseDensity:
    phase_edges: np.ndarray
    values: np.ndarray
    n_samples: int
    state: int


def stationary_phase_distribution(
    records: list[TrajectoryRecord],
    sequences: list[StateSequence],
    state: int,
    phase_bins: int = DEFAULT_PHASE_BINS,
) -> PhaseDensity:
    """Distribution of the optical phase over all post-transient samples
    assigned to one basin, normalized as a density over [0, 2 pi)."""
    edges = np.linspace(0.0, 2.0 * np.pi, phase_bins + 1)
    hist = np.zeros(phase_bins)
    total = 0
    for rec, seq in zip(records, sequences):
        labels = seq.labels
        alpha = rec.alpha[seq.start_index : seq.start_index + len(labels)]
        phases = wrap_phase(alpha[labels == state])
        if len(phases):
            h, _ = np.histogram(phases, bins=edges)
            hist += h
            total += len(phases)
    if total == 0:
        raise InvalidParameterError(f"no samples assigned to state {state}")
    width = edges[1] - edges[0]
    return PhaseDensity(
        phase_edges=edges, values=hist / (total * width), n_samples=total, state=state
    )


@dataclass(frozen=True)
class HazardProfile:
    """Escape propensity versus optical phase, rescaled to unit maximum.

    Bins where the stationary occupancy is below the floor are NaN.
    """

    phase_edges: np.ndarray
    values: np.ndarray
    direction: tuple[int, int]
    n_masked: int


def hazard(
    histogram: PhaseHistogram,
    stationary: dict[int, PhaseDensity],
    floor_fraction: float = HAZARD_FLOOR_FRACTION,
) -> HazardProfile:
    """Phase-conditioned escape hazard at the switching time.

    Divides the tau = 0 column (the last pre-switch sample, i.e. still in the
    source basin) by the source basin's stationary phase density, masks bins
    whose stationary density is below ``floor_fraction`` of uniform, and
    rescales to unit maximum.
    """
    source = histogram.direction[0]
    stat = stationary[source]
    if len(stat.values) != histogram.values.shape[1]:
        raise InvalidParameterError("phase grids of histogram and stationary density differ")
    raw = histogram.column(0.0)
    floor = floor_fraction / (2.0 * np.pi)
    masked = stat.values < floor
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(masked, np.nan, raw / stat.values)
    if np.all(np.isnan(h)) or np.nanmax(h) <= 0:
        raise DegenerateHazardError("every phase bin is masked or empty")
    h = h / np.nanmax(h)
    return HazardProfile(
        phase_edges=histogram.phase_edges,
        values=h,
        direction=histogram.direction,
        n_masked=int(masked.sum()),
    )


def circular_moments(phases: np.ndarray) -> tuple[float, float, float]:
    """(mean direction, resultant length R, angular deviation sqrt(2(1-R))).

    The angular deviation reaches sqrt(2) for a uniform distribution, which
    serves as the reference value for localization checks.
    """
    if len(phases) == 0:
        raise InvalidParameterError("no phases")
    z = np.exp(1j * np.asarray(phases)).mean()
    r = float(np.abs(z))
    return float(np.mod(np.angle(z), 2 * np.pi)), r, math.sqrt(max(0.0, 2.0 * (1.0 - r)))


def circular_moments_binned(density: np.ndarray, edges: np.ndarray) -> tuple[float, float, float]:
    """Circular moments of a binned phase density (bin centers weighted)."""
    centers = 0.5 * (edges[:-1] + edges[1:])
    w = np.asarray(density, dtype=float)
    w = np.where(np.isfinite(w), w, 0.0)
    total = w.sum()
    if total <= 0:
        raise InvalidParameterError("empty density")
    z = np.sum(w * np.exp(1j * centers)) / total
    r = float(np.abs(z))
    return float(np.mod(np.angle(z), 2 * np.pi)), r, math.sqrt(max(0.0, 2.0 * (1.0 - r)))
