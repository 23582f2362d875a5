"""Deterministic mean-field flow, attractor classification, and limit-cycle extraction.

All quantities here are in the rescaled (tilde) convention, where the flow is
independent of the fluctuation parameter: rescaled populations are
``n_a = |alpha|^2`` and ``n_b = |beta|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import _mf_kernels
from .errors import AttractorNotFoundError, InvalidParameterError, StiffnessError
from .params import SystemParams

#: A mode is static when its late-time peak-to-peak amplitude is below this.
EPS_OSC = 5e-3
#: Diagnostic vectors closer than this (max-norm) belong to one attractor.
EPS_TOL = 1e-2
#: Late-time analysis window, in units of 1/kappa_a.
WINDOW_OVER_KAPPA = 30.0
#: Default integration horizon, in units of 1/kappa_a.
T_FINAL_OVER_KAPPA = 3e3


@dataclass(frozen=True)
class MeanFieldState:
    """Coherent amplitudes of the two modes (tilde scale)."""

    alpha: complex
    beta: complex

    def as_real(self) -> np.ndarray:
        return np.array(
            [self.alpha.real, self.alpha.imag, self.beta.real, self.beta.imag]
        )

    @classmethod
    def from_real(cls, y) -> "MeanFieldState":
        return cls(alpha=complex(y[0], y[1]), beta=complex(y[2], y[3]))


def meanfield_rhs(s: MeanFieldState, p: SystemParams) -> MeanFieldState:
    """Drift of the coherent amplitudes.

    d alpha/dt = -i [(delta_a - i kappa_a/2) alpha + g alpha (beta + beta*) + F]
    d beta/dt  = -i [omega_b beta - i kappa_b (beta - beta*)/2 + g |alpha|^2]
    """
    a, b = s.alpha, s.beta
    da = -1j * ((p.delta_a - 0.5j * p.kappa_a) * a + p.g * a * (b + b.conjugate()) + p.f)
    db = -1j * (p.omega_b * b - 0.5j * p.kappa_b * (b - b.conjugate()) + p.g * abs(a) ** 2)
    return MeanFieldState(alpha=da, beta=db)


@dataclass(frozen=True)
class IntegrationControls:
    rtol: float = 1e-8
    atol: float = 1e-10
    t_final: float | None = None  # defaults to 3e3 / kappa_a
    n_window: int = 4096  # samples across the diagnostics window


@dataclass(frozen=True)
class MeanFieldTrajectory:
    t: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def n_a(self) -> np.ndarray:
        return np.abs(self.alpha) ** 2

    @property
    def n_b(self) -> np.ndarray:
        return np.abs(self.beta) ** 2


def _rhs_real(t, y, p: SystemParams):
    out = np.empty(4)
    _mf_kernels.drift(y, out, p.delta_a, p.omega_b, p.g, p.f, p.kappa_a, p.kappa_b)
    return out


def integrate(
    s0: MeanFieldState,
    p: SystemParams,
    t_final: float,
    controls: IntegrationControls = IntegrationControls(),
    t_eval: np.ndarray | None = None,
) -> MeanFieldTrajectory:
    """Adaptive RK45 solution sampled on ``t_eval`` (default: 2000 uniform points)."""
    if not t_final > 0:
        raise InvalidParameterError(f"t_final must be > 0, got {t_final}")
    if t_eval is None:
        t_eval = np.linspace(0.0, t_final, 2001)
    sol = solve_ivp(
        _rhs_real,
        (0.0, t_final),
        s0.as_real(),
        method="RK45",
        t_eval=t_eval,
        rtol=controls.rtol,
        atol=controls.atol,
        args=(p,),
    )
    if not sol.success:
        raise StiffnessError(f"integration failed: {sol.message}")
    y = sol.y
    return MeanFieldTrajectory(
        t=sol.t, alpha=y[0] + 1j * y[1], beta=y[2] + 1j * y[3]
    )


@dataclass(frozen=True)
class AttractorDiagnostics:
    """Late-time summary of one trajectory: oscillation sizes and mean populations."""

    d_alpha_r: float
    d_beta_r: float
    mean_n_a: float
    mean_n_b: float

    def vector(self) -> np.ndarray:
        return np.array([self.d_alpha_r, self.d_beta_r, self.mean_n_a, self.mean_n_b])

    @property
    def is_dynamical(self) -> bool:
        return max(self.d_alpha_r, self.d_beta_r) >= EPS_OSC


class CellLabel(Enum):
    FP1 = "1FP"
    FP2 = "2FP"
    LC1_ONLY = "1LC"
    LC1_FP1 = "1LC,1FP"
    LC2 = "2LC"
    LC2_FP1 = "2LC,1FP"
    UNCATEGORIZED = "uncat"


@dataclass(frozen=True)
class PhaseCell:
    delta_a: float
    f_tilde: float
    label: CellLabel
    attractors: tuple[AttractorDiagnostics, ...]
    n_failed: int = 0


def initial_condition_disk(n_init: int = 157, radius: float = 5.0) -> np.ndarray:
    """Initial optical amplitudes covering the disk |alpha| <= radius.

    Layout: one point at the origin plus five concentric rings at radii
    radius * {1..5}/5 with counts proportional to radius (area-uniform
    coverage).  The default 157 points split as 10/21/31/42/52.
    """
    if n_init < 6:
        raise InvalidParameterError("n_init must be at least 6")
    n_rings = 5
    weights = np.arange(1, n_rings + 1)
    remaining = n_init - 1
    counts = np.round(remaining * np.cumsum(weights) / weights.sum()).astype(int)
    counts = np.diff(np.concatenate(([0], counts)))
    points = [0.0 + 0.0j]
    for ring, count in enumerate(counts, start=1):
        r = radius * ring / n_rings
        angles = 2.0 * np.pi * np.arange(count) / count
        points.extend(r * np.exp(1j * angles))
    return np.asarray(points, dtype=complex)


def cluster_diagnostics(vectors: np.ndarray, tol: float = EPS_TOL) -> np.ndarray:
    """Greedy agglomeration in max-norm; first-seen vector anchors each cluster.

    Returns the cluster index of every row; clusters are numbered in order of
    first appearance, so the assignment is deterministic for a fixed row order.
    """
    vectors = np.asarray(vectors, dtype=float)
    anchors: list[np.ndarray] = []
    labels = np.empty(len(vectors), dtype=int)
    for i, v in enumerate(vectors):
        for ci, anchor in enumerate(anchors):
            if np.max(np.abs(v - anchor)) <= tol:
                labels[i] = ci
                break
        else:
            anchors.append(v)
            labels[i] = len(anchors) - 1
    return labels


_LABEL_TABLE = {
    (0, 1): CellLabel.FP1,
    (0, 2): CellLabel.FP2,
    (1, 0): CellLabel.LC1_ONLY,
    (1, 1): CellLabel.LC1_FP1,
    (2, 0): CellLabel.LC2,
    (2, 1): CellLabel.LC2_FP1,
}


def _cell_params(delta_a: float, f_tilde: float, base: SystemParams) -> SystemParams:
    return SystemParams(
        delta_a=delta_a,
        omega_b=base.omega_b,
        g=base.g,
        f=f_tilde,
        kappa_a=base.kappa_a,
        kappa_b=base.kappa_b,
    )


def _scan(p: SystemParams, grid: np.ndarray, controls: IntegrationControls):
    """Late-window diagnostics for every start in ``grid``.

    Window averages are Hann-tapered, which removes the dependence of the
    mean populations on the (arbitrary) oscillation phase at window entry;
    without the taper that leakage exceeds the clustering tolerance for
    large-amplitude cycles.
    """
    t_final = controls.t_final if controls.t_final is not None else T_FINAL_OVER_KAPPA / p.kappa_a
    window = WINDOW_OVER_KAPPA / p.kappa_a
    y0s = np.zeros((len(grid), 4))
    y0s[:, 0] = np.real(grid)
    y0s[:, 1] = np.imag(grid)
    t_rel = np.linspace(0.0, window, controls.n_window)
    taper = np.sin(np.pi * np.arange(controls.n_window) / (controls.n_window - 1)) ** 2
    taper /= taper.sum()
    return _mf_kernels.scan_ensemble(
        y0s, t_final - window, t_rel, taper, controls.rtol, controls.atol,
        p.delta_a, p.omega_b, p.g, p.f, p.kappa_a, p.kappa_b,
    )


def _classify_scanned(diags: np.ndarray, status: np.ndarray, delta_a: float,
                      f_tilde: float) -> PhaseCell:
    ok = status == 0
    n_failed = int(np.sum(~ok))
    good = diags[ok]
    if len(good) == 0:
        return PhaseCell(delta_a, f_tilde, CellLabel.UNCATEGORIZED, (), n_failed)
    labels = cluster_diagnostics(good, tol=EPS_TOL)
    reps = []
    for ci in range(labels.max() + 1):
        members = good[labels == ci]
        reps.append(AttractorDiagnostics(*members.mean(axis=0)))
    n_lc = sum(1 for r in reps if r.is_dynamical)
    n_fp = len(reps) - n_lc
    label = CellLabel.UNCATEGORIZED if len(reps) > 3 else _LABEL_TABLE.get(
        (n_lc, n_fp), CellLabel.UNCATEGORIZED
    )
    return PhaseCell(delta_a, f_tilde, label, tuple(reps), n_failed)


def classify_point(
    delta_a: float,
    f_tilde: float,
    base: SystemParams,
    grid: np.ndarray | None = None,
    controls: IntegrationControls = IntegrationControls(),
) -> PhaseCell:
    """Classify the attractor content at one (detuning, drive) cell.

    Every start in ``grid`` (optical amplitude; mechanical mode at rest) is
    integrated to the horizon; late-window diagnostics are clustered and the
    cell label derives from how many limit cycles / fixed points coexist.
    Starts whose integration fails are excluded and counted in ``n_failed``.
    """
    if grid is None:
        grid = initial_condition_disk()
    if len(grid) == 0:
        raise InvalidParameterError("initial-condition grid is empty")
    p = _cell_params(delta_a, f_tilde, base)
    diags, status = _scan(p, grid, controls)
    return _classify_scanned(diags, status, delta_a, f_tilde)


@dataclass(frozen=True)
class LimitCycleOrbit:
    """One period of a stable limit cycle, sampled uniformly in time.

    The final sample returns to the first within the closure tolerance.
    """

    t: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    period: float
    diagnostics: AttractorDiagnostics | None = field(compare=False, default=None)

    @property
    def mean_n_a(self) -> float:
        # endpoint duplicates the start; drop it from the average
        return float(np.mean(np.abs(self.alpha[:-1]) ** 2))

    @property
    def mean_n_b(self) -> float:
        return float(np.mean(np.abs(self.beta[:-1]) ** 2))

    @property
    def peak_n_a(self) -> float:
        return float(np.max(np.abs(self.alpha) ** 2))

    @property
    def peak_n_b(self) -> float:
        return float(np.max(np.abs(self.beta) ** 2))

    def closure_error(self) -> float:
        y0 = np.array([self.alpha[0].real, self.alpha[0].imag,
                       self.beta[0].real, self.beta[0].imag])
        y1 = np.array([self.alpha[-1].real, self.alpha[-1].imag,
                       self.beta[-1].real, self.beta[-1].imag])
        return float(np.linalg.norm(y1 - y0))


def _estimate_period(t: np.ndarray, x: np.ndarray) -> float:
    """Dominant oscillation period from the autocorrelation of a late-time signal.

    For a converged periodic signal the autocorrelation returns to ~1 at the
    fundamental period; sub-period local maxima from harmonics stay well below
    that, so the first near-unity peak identifies the fundamental.
    """
    x = x - x.mean()
    n = len(x)
    acf = np.correlate(x, x, mode="full")[n - 1 :]
    if acf[0] <= 0:
        raise AttractorNotFoundError("signal has no oscillation")
    acf = acf / acf[0]
    # unbiased correction: late lags average over fewer samples
    acf = acf / (1.0 - np.arange(n) / n)
    interior = np.nonzero(
        (acf[1:-1] > acf[:-2]) & (acf[1:-1] >= acf[2:]) & (np.arange(1, n - 1) > 2)
    )[0] + 1
    peaks = [i for i in interior if acf[i] > 0.95 and i < 0.8 * n]
    if not peaks:
        raise AttractorNotFoundError("no repeating structure in autocorrelation")
    peak = peaks[0]
    dt = t[1] - t[0]
    y0, y1, y2 = acf[peak - 1], acf[peak], acf[peak + 1]
    denom = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
    return float((peak + shift) * dt)


def _refine_period(y_anchor: np.ndarray, p: SystemParams, t0_est: float,
                   controls: IntegrationControls) -> float:
    """Polish the period so the orbit returns exactly to its anchor section.

    The section is Re(alpha) = anchor value with the anchor's crossing
    direction; the return time is found by root-finding on the dense solution.
    """
    target = y_anchor[0]
    sol = solve_ivp(
        _rhs_real,
        (0.0, 1.25 * t0_est),
        y_anchor,
        method="RK45",
        dense_output=True,
        rtol=controls.rtol,
        atol=controls.atol,
        args=(p,),
    )
    if not sol.success:
        raise StiffnessError(f"period refinement failed: {sol.message}")
    g = lambda t: sol.sol(t)[0] - target
    deriv0 = _rhs_real(0.0, y_anchor, p)[0]
    ts = np.linspace(0.8 * t0_est, min(1.2 * t0_est, sol.t[-1]), 400)
    vals = np.array([g(t) for t in ts])
    for i in range(len(ts) - 1):
        if vals[i] * vals[i + 1] < 0:
            slope = vals[i + 1] - vals[i]
            if slope * deriv0 > 0:
                return float(brentq(g, ts[i], ts[i + 1], xtol=1e-12))
    raise AttractorNotFoundError("no return to the anchor section near the period estimate")


def extract_limit_cycles(
    p: SystemParams,
    grid: np.ndarray | None = None,
    controls: IntegrationControls = IntegrationControls(),
    n_samples: int = 512,
    settle_time: float | None = None,
    closure_tol: float = 1e-6,
) -> list[LimitCycleOrbit]:
    """Extract every coexisting limit cycle at the given parameters.

    Returns one sampled period per dynamical attractor, ordered by mean
    rescaled optical population (small-amplitude cycle first).  Raises
    :class:`AttractorNotFoundError` when no dynamical attractor exists.
    """
    if grid is None:
        grid = initial_condition_disk()
    diags, status = _scan(p, grid, controls)
    cell = _classify_scanned(diags, status, p.delta_a, p.f)
    dyn = [d for d in cell.attractors if d.is_dynamical]
    if not dyn:
        raise AttractorNotFoundError(
            f"no limit cycle at delta_a={p.delta_a}, f={p.f} (label {cell.label.value})"
        )
    if settle_time is None:
        settle_time = 600.0 / p.kappa_a
    orbits = []
    for target in dyn:
        dist = np.max(np.abs(diags - target.vector()[None, :]), axis=1)
        dist[status != 0] = np.inf
        start = MeanFieldState(alpha=complex(grid[int(np.argmin(dist))]), beta=0.0)
        orbits.append(
            _orbit_from_start(start, p, target, controls, n_samples, settle_time, closure_tol)
        )
    orbits.sort(key=lambda o: o.mean_n_a)
    return orbits


def _orbit_from_start(
    s0: MeanFieldState,
    p: SystemParams,
    diagnostics: AttractorDiagnostics,
    controls: IntegrationControls,
    n_samples: int,
    settle_time: float,
    closure_tol: float,
) -> LimitCycleOrbit:
    # settle onto the attractor, then sample a window to estimate the period
    probe_window = 40.0 * 2.0 * math.pi / p.omega_b
    dt = (2.0 * math.pi / p.omega_b) / 256.0
    t_grid = np.concatenate(([0.0], settle_time + np.arange(0.0, probe_window, dt)))
    out, ok = _mf_kernels.integrate_grid(
        s0.as_real(), t_grid, controls.rtol, controls.atol,
        p.delta_a, p.omega_b, p.g, p.f, p.kappa_a, p.kappa_b,
    )
    if not ok:
        raise StiffnessError("settling integration failed")
    late_t = t_grid[1:] - settle_time
    late_x = out[1:, 0]
    period0 = _estimate_period(late_t, late_x)
    # anchor on an upward crossing of the window-mean level
    level = late_x.mean()
    rising = np.nonzero((late_x[:-1] < level) & (late_x[1:] >= level))[0]
    if len(rising) == 0:
        raise AttractorNotFoundError("no section crossing found on the attractor")
    anchor = out[1 + rising[len(rising) // 2]]
    last_err = None
    for mult in (1, 2, 3):
        period = _refine_period(anchor, p, mult * period0, controls)
        sample_t = np.linspace(0.0, period, n_samples + 1)
        ys, ok = _mf_kernels.integrate_grid(
            anchor.copy(), sample_t, controls.rtol, controls.atol,
            p.delta_a, p.omega_b, p.g, p.f, p.kappa_a, p.kappa_b,
        )
        if not ok:
            raise StiffnessError("orbit sampling failed")
        orbit = LimitCycleOrbit(
            t=sample_t,
            alpha=ys[:, 0] + 1j * ys[:, 1],
            beta=ys[:, 2] + 1j * ys[:, 3],
            period=period,
            diagnostics=diagnostics,
        )
        last_err = orbit.closure_error()
        if last_err <= closure_tol:
            return orbit
    raise AttractorNotFoundError(
        f"orbit does not close: residual {last_err:.2e} > {closure_tol:.0e}"
    )
