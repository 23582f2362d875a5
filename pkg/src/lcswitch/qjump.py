"""Stochastic wave-function (quantum-jump) trajectory engine.

Between collapses the state evolves under the non-Hermitian generator with a
fixed-step fourth-order Runge-Kutta propagator and is renormalized after every
step.  Collapses are sampled to first order in the step: one uniform draw per
step decides jump / no-jump and, on a jump, the emitting mode.  The step size
is capped both by the fastest coherent frequency and by the propagator's
stability bound, and is subdivided further whenever the total jump
probability of a single step would exceed ``P_TOT_CAP``.

Randomness is counter based: each trajectory draws from a Philox stream keyed
by (master seed, trajectory index), so ensembles are reproducible under any
execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidParameterError, StepError
from .operators import QuantumState, build_effective_hamiltonian, coherent_state, mode_operators
from .params import FockCutoffs, ResolvedParams, ScalingPlan, resolve_params

#: Hard cap on the per-step total jump probability.
P_TOT_CAP = 0.05
#: dt * (fastest coherent rate) stays below this.
FREQ_RESOLUTION = 0.05
#: dt * (spectral bound of H_eff) stays below this; RK4 is stable to ~2.8.
STABILITY_MARGIN = 1.5


class Channel:
    OPTICAL = 0
    MECHANICAL = 1


@dataclass(frozen=True)
class JumpEvent:
    time: float
    channel: int


@dataclass(frozen=True)
class InitialStatePolicy:
    """How trajectory initial states are drawn.

    ``disk``: coherent optical amplitude uniform on |alpha~| <= radius
    (scaled by sqrt(aleph)), mechanical mode in vacuum.  ``fixed``: coherent
    state with the given physical (unscaled) amplitudes.  ``fock``: number
    state |n_a, n_b>.
    """

    kind: str = "disk"
    radius: float = 5.0
    alpha0: complex = 0.0
    beta0: complex = 0.0
    n_a: int = 0
    n_b: int = 0

    def draw(self, rng: np.random.Generator, aleph: float, cutoffs: FockCutoffs) -> QuantumState:
        from .operators import fock_state

        if self.kind == "disk":
            u, v = rng.random(2)
            alpha = self.radius * math.sqrt(u) * np.exp(2j * np.pi * v) * math.sqrt(aleph)
            return coherent_state(alpha, 0.0, cutoffs)
        if self.kind == "fixed":
            return coherent_state(self.alpha0, self.beta0, cutoffs)
        if self.kind == "fock":
            return fock_state(self.n_a, self.n_b, cutoffs)
        raise InvalidParameterError(f"unknown initial-state policy {self.kind!r}")


@dataclass(frozen=True)
class EnsembleSpec:
    """Trajectory count, horizons, and sampling for one ensemble.

    ``None`` horizons resolve to the defaults 500/kappa_a (transient) and
    2000/kappa_a (post-transient window); ``None`` sampling resolves to
    0.1/kappa_a, which oversamples the mechanical-period oscillations while
    keeping storage bounded.
    """

    n_traj: int = 1
    t_transient: float | None = None
    t_total_post: float | None = None
    dt_sample: float | None = None
    policy: InitialStatePolicy = InitialStatePolicy()
    dt_max: float | None = None  # extra user cap on the propagator step

    def __post_init__(self):
        if self.n_traj < 1:
            raise InvalidParameterError("n_traj must be >= 1")
        for name in ("t_transient", "t_total_post", "dt_sample"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                if name == "t_transient" and v == 0.0:
                    continue
                raise InvalidParameterError(f"{name} must be positive, got {v}")

    def resolved(self, kappa_a: float) -> "EnsembleSpec":
        return replace(
            self,
            t_transient=500.0 / kappa_a if self.t_transient is None else self.t_transient,
            t_total_post=2000.0 / kappa_a if self.t_total_post is None else self.t_total_post,
            dt_sample=0.1 / kappa_a if self.dt_sample is None else self.dt_sample,
        )


@dataclass(frozen=True)
class TrajectoryRecord:
    """Uniformly sampled observables of one trajectory, in rescaled units.

    ``n_a``/``n_b`` are populations divided by aleph; ``alpha``/``beta`` are
    coherent amplitudes divided by sqrt(aleph).  ``t`` is reported time
    (already multiplied by the scheme's time scale); the sampling grid is
    uniform with spacing ``dt_sample``.
    """

    seed: int
    aleph: float
    scheme: str
    cutoffs: tuple[int, int]
    dt_sample: float
    transient_cut: float
    t: np.ndarray
    n_a: np.ndarray
    n_b: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    jump_times: np.ndarray
    jump_channels: np.ndarray
    truncation_warning: bool = False

    @property
    def n_samples(self) -> int:
        return len(self.t)

    def post_transient_slice(self) -> slice:
        idx = int(np.searchsorted(self.t, self.transient_cut - 1e-9))
        return slice(idx, None)


def _spectral_bound(h_eff: sp.spmatrix) -> float:
    """Largest singular value of the generator, by power iteration.

    Overestimates the spectral radius, which is the safe direction for the
    stability cap.  Seeded internally so the resulting step size (and thus
    every trajectory) is reproducible.
    """
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(h_eff.shape[0]) + 1j * rng.standard_normal(h_eff.shape[0])
    v /= np.linalg.norm(v)
    h_adj = h_eff.conjugate().T.tocsr()
    sigma2 = 0.0
    for _ in range(40):
        w = h_adj @ (h_eff @ v)
        sigma2 = np.linalg.norm(w)
        if sigma2 == 0.0:
            return 0.0
        v = w / sigma2
    return math.sqrt(sigma2)


def propagator_dt(p, cutoffs: FockCutoffs, h_eff: sp.spmatrix) -> float:
    """Deterministic-substep size from frequency resolution and RK4 stability."""
    fastest = max(abs(p.delta_a), p.omega_b, p.kappa_a * cutoffs.n_a_max,
                  p.kappa_b * cutoffs.n_b_max)
    dt = FREQ_RESOLUTION / fastest
    bound = _spectral_bound(h_eff)
    if bound > 0:
        dt = min(dt, STABILITY_MARGIN / bound)
    return dt


@dataclass
class _Engine:
    """Bound operators and weights for one (params, cutoffs) pair."""

    generator: sp.csr_matrix  # -i * H_eff
    op_a: sp.csr_matrix
    op_b: sp.csr_matrix
    num_a_diag: np.ndarray
    num_b_diag: np.ndarray
    kappa_a: float
    kappa_b: float
    dt: float

    @classmethod
    def build(cls, p, cutoffs: FockCutoffs, dt_max: float | None = None) -> "_Engine":
        ops = mode_operators(cutoffs)
        h_eff = build_effective_hamiltonian(p, cutoffs)
        dt = propagator_dt(p, cutoffs, h_eff)
        if dt_max is not None:
            dt = min(dt, dt_max)
        return cls(
            generator=(-1j) * h_eff.tocsr(),
            op_a=ops["a"],
            op_b=ops["b"],
            num_a_diag=ops["num_a"].diagonal().real.copy(),
            num_b_diag=ops["num_b"].diagonal().real.copy(),
            kappa_a=p.kappa_a,
            kappa_b=p.kappa_b,
            dt=dt,
        )

    def populations(self, psi: np.ndarray) -> tuple[float, float]:
        w = np.abs(psi) ** 2
        return float(w @ self.num_a_diag), float(w @ self.num_b_diag)

    def rk4_raw(self, psi: np.ndarray, dt: float) -> np.ndarray:
        """One unnormalized step of d psi/dt = -i H_eff psi."""
        m = self.generator
        k1 = m @ psi
        k2 = m @ (psi + 0.5 * dt * k1)
        k3 = m @ (psi + 0.5 * dt * k2)
        k4 = m @ (psi + dt * k3)
        return psi + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)

    def rk4_renorm(self, psi: np.ndarray, dt: float) -> np.ndarray:
        out = self.rk4_raw(psi, dt)
        out /= np.linalg.norm(out)
        return out


def jump_probabilities(
    psi: np.ndarray, engine: _Engine, dt: float
) -> tuple[float, float]:
    """First-order channel jump probabilities (kappa_a <n_a> dt, kappa_b <n_b> dt)."""
    n_a, n_b = engine.populations(psi)
    return engine.kappa_a * n_a * dt, engine.kappa_b * n_b * dt


def step(
    psi: np.ndarray,
    engine: _Engine,
    dt: float,
    rng,
    t: float = 0.0,
    max_subdivisions: int = 20,
) -> tuple[np.ndarray, JumpEvent | None]:
    """Advance one step of size ``dt``: collapse or evolve-and-renormalize.

    One uniform draw decides the branch.  The no-emission probability is the
    squared norm of the propagated (unnormalized) state, which removes the
    O(p_tot) rate bias of the literal first-order expression while keeping
    the same single-draw structure; the first-order channel probabilities
    still set both the emitting-mode weights and the step cap.

    If the first-order total for ``dt`` exceeds the cap, the step is split
    into 2^m equal substeps with independent draws.  Raises
    :class:`StepError` if the cap cannot be met within ``max_subdivisions``
    halvings.
    """
    p_a, p_b = jump_probabilities(psi, engine, dt)
    p_tot = p_a + p_b
    if p_tot > P_TOT_CAP:
        m = math.ceil(math.log2(p_tot / P_TOT_CAP))
        if m > max_subdivisions:
            raise StepError(
                f"jump probability {p_tot:.3g} cannot be capped within "
                f"{max_subdivisions} subdivisions"
            )
        sub = dt / 2**m
        event = None
        for k in range(2**m):
            psi, ev = step(psi, engine, sub, rng, t=t + k * sub,
                           max_subdivisions=max_subdivisions - m)
            if ev is not None and event is None:
                event = ev
        return psi, event
    if p_tot == 0.0:
        # no open channel: purely deterministic step, no draw consumed
        return engine.rk4_renorm(psi, dt), None
    phi = engine.rk4_raw(psi, dt)
    norm2 = float(np.real(np.vdot(phi, phi)))
    p_jump = max(0.0, 1.0 - norm2)
    mu = rng.random()
    if mu < p_jump:
        # place the collapse at the step midpoint so the step's deterministic
        # evolution is not lost (evolve, collapse, evolve)
        half = 0.5 * dt
        mid = engine.rk4_renorm(psi, half)
        if mu < p_jump * (p_a / p_tot):
            mid = engine.op_a @ mid
            channel = Channel.OPTICAL
        else:
            mid = engine.op_b @ mid
            channel = Channel.MECHANICAL
        nrm = np.linalg.norm(mid)
        if nrm == 0.0:
            raise StepError("collapse annihilated the state")
        return engine.rk4_renorm(mid / nrm, half), JumpEvent(time=t + half, channel=channel)
    return phi / math.sqrt(norm2), None


def trajectory_seed(master_seed: int, index: int) -> int:
    """Per-trajectory 64-bit seed derived from the master seed and index."""
    ss = np.random.SeedSequence(entropy=(int(master_seed), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _traj_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def simulate_trajectory(
    spec: EnsembleSpec,
    plan: ScalingPlan,
    cutoffs: FockCutoffs,
    seed: int,
    engine: _Engine | None = None,
) -> TrajectoryRecord:
    """Generate one trajectory; deterministic given ``seed`` and inputs.

    Observables are recorded on the uniform grid t = 0, dt, 2 dt, ...;
    populations are divided by aleph and amplitudes by sqrt(aleph) so records
    taken at different fluctuation strengths are directly comparable.  A
    sustained population within 10% of either cutoff raises the record's
    truncation flag.
    """
    res = resolve_params(plan)
    p = res.params
    spec = spec.resolved(p.kappa_a)
    if engine is None:
        engine = _Engine.build(p, cutoffs, dt_max=spec.dt_max)
    rng = _traj_rng(seed)
    psi = spec.policy.draw(rng, res.aleph, cutoffs).amplitudes.copy()

    t_total = spec.t_transient + spec.t_total_post
    n_samples = int(round(t_total / spec.dt_sample)) + 1
    n_sub = max(1, math.ceil(spec.dt_sample / engine.dt))
    dt = spec.dt_sample / n_sub

    root_aleph = math.sqrt(res.aleph)
    t_arr = np.arange(n_samples) * spec.dt_sample
    n_a_arr = np.empty(n_samples)
    n_b_arr = np.empty(n_samples)
    alpha_arr = np.empty(n_samples, dtype=complex)
    beta_arr = np.empty(n_samples, dtype=complex)
    jumps_t: list[float] = []
    jumps_c: list[int] = []

    near_cap_run = 0
    truncation = False
    cap_a = 0.9 * cutoffs.n_a_max
    cap_b = 0.9 * cutoffs.n_b_max

    for i in range(n_samples):
        n_a, n_b = engine.populations(psi)
        n_a_arr[i] = n_a / res.aleph
        n_b_arr[i] = n_b / res.aleph
        alpha_arr[i] = np.vdot(psi, engine.op_a @ psi) / root_aleph
        beta_arr[i] = np.vdot(psi, engine.op_b @ psi) / root_aleph
        if n_a >= cap_a or n_b >= cap_b:
            near_cap_run += 1
            if near_cap_run >= 10:
                truncation = True
        else:
            near_cap_run = 0
        if i == n_samples - 1:
            break
        t0 = i * spec.dt_sample
        for k in range(n_sub):
            psi, ev = step(psi, engine, dt, rng, t=t0 + k * dt)
            if ev is not None:
                jumps_t.append(ev.time)
                jumps_c.append(ev.channel)

    ts = res.time_scale
    return TrajectoryRecord(
        seed=int(seed),
        aleph=res.aleph,
        scheme=res.scheme.value,
        cutoffs=(cutoffs.n_a_max, cutoffs.n_b_max),
        dt_sample=spec.dt_sample * ts,
        transient_cut=spec.t_transient * ts,
        t=t_arr * ts,
        n_a=n_a_arr,
        n_b=n_b_arr,
        alpha=alpha_arr,
        beta=beta_arr,
        jump_times=np.asarray(jumps_t, dtype=float) * ts,
        jump_channels=np.asarray(jumps_c, dtype=np.uint8),
        truncation_warning=truncation,
    )


def _simulate_indexed(args):
    spec, plan, cutoffs, master_seed, index = args
    return index, simulate_trajectory(spec, plan, cutoffs, trajectory_seed(master_seed, index))


def simulate_ensemble(
    spec: EnsembleSpec,
    plan: ScalingPlan,
    cutoffs: FockCutoffs,
    master_seed: int,
    workers: int = 1,
) -> list[TrajectoryRecord]:
    """Simulate ``spec.n_traj`` independent trajectories.

    Results are returned in trajectory-index order regardless of the worker
    schedule, so ensembles are reproducible for any ``workers`` value.
    """
    indices = range(spec.n_traj)
    if workers <= 1:
        return [
            simulate_trajectory(spec, plan, cutoffs, trajectory_seed(master_seed, i))
            for i in indices
        ]
    tasks = [(spec, plan, cutoffs, master_seed, i) for i in indices]
    out: dict[int, TrajectoryRecord] = {}
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for idx, rec in pool.map(_simulate_indexed, tasks):
            out[idx] = rec
    return [out[i] for i in indices]


@dataclass(frozen=True)
class Density2D:
    """Normalized 2-D histogram: sum(values) * cell_area = 1."""

    x_edges: np.ndarray
    y_edges: np.ndarray
    values: np.ndarray
    n_samples: int

    def integral(self) -> float:
        dx = np.diff(self.x_edges)[:, None]
        dy = np.diff(self.y_edges)[None, :]
        return float(np.sum(self.values * dx * dy))


_PROJECTIONS = ("optical", "mechanical", "population")


def stationary_density(
    records: list[TrajectoryRecord],
    projection: str = "population",
    bins: int = 128,
    ranges: tuple[tuple[float, float], tuple[float, float]] | None = None,
) -> Density2D:
    """Empirical stationary density of post-transient samples.

    Projections: ``optical`` (Re alpha~, Im alpha~), ``mechanical``
    (Re beta~, Im beta~), or ``population`` (n_a~, n_b~).  Records must share
    the fluctuation strength and sampling grid.
    """
    if not records:
        raise InvalidParameterError("no records supplied")
    if projection not in _PROJECTIONS:
        raise InvalidParameterError(f"projection must be one of {_PROJECTIONS}")
    aleph0 = records[0].aleph
    dt0 = records[0].dt_sample
    for r in records:
        if r.aleph != aleph0 or r.dt_sample != dt0:
            raise InvalidParameterError("records mix aleph values or sampling grids")
    xs, ys = [], []
    for r in records:
        sl = r.post_transient_slice()
        if projection == "optical":
            xs.append(r.alpha[sl].real)
            ys.append(r.alpha[sl].imag)
        elif projection == "mechanical":
            xs.append(r.beta[sl].real)
            ys.append(r.beta[sl].imag)
        else:
            xs.append(r.n_a[sl])
            ys.append(r.n_b[sl])
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    hist, xe, ye = np.histogram2d(x, y, bins=bins, range=ranges, density=True)
    return Density2D(x_edges=xe, y_edges=ye, values=hist, n_samples=len(x))


def ensemble_means(records: list[TrajectoryRecord]) -> tuple[float, float]:
    """Post-transient ensemble means of the rescaled populations."""
    n_a = np.concatenate([r.n_a[r.post_transient_slice()] for r in records])
    n_b = np.concatenate([r.n_b[r.post_transient_slice()] for r in records])
    return float(n_a.mean()), float(n_b.mean())


def convergence_check(
    spec: EnsembleSpec,
    plan: ScalingPlan,
    cutoffs: FockCutoffs,
    master_seed: int,
    rel_tol: float = 0.01,
    workers: int = 1,
) -> dict:
    """Double both cutoffs and compare ensemble mean populations.

    Returns a report dict with the two sets of means and whether the relative
    change stays below ``rel_tol`` (the convergence criterion for accepting
    the smaller cutoffs).
    """
    base = simulate_ensemble(spec, plan, cutoffs, master_seed, workers=workers)
    doubled = FockCutoffs(2 * cutoffs.n_a_max, 2 * cutoffs.n_b_max,
                          max_dim=max(cutoffs.max_dim, 4 * cutoffs.dim + 4))
    big = simulate_ensemble(spec, plan, doubled, master_seed, workers=workers)
    m0 = ensemble_means(base)
    m1 = ensemble_means(big)
    rel = tuple(abs(a - b) / max(abs(b), 1e-12) for a, b in zip(m0, m1))
    return {
        "means_base": m0,
        "means_doubled": m1,
        "rel_change": rel,
        "converged": max(rel) < rel_tol,
    }
