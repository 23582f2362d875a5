import numpy as np
import pytest
from scipy.integrate import solve_ivp

from lcswitch.errors import StepError
from lcswitch.operators import (
    build_hamiltonian,
    coherent_state,
    fock_state,
    mode_operators,
    position_damping_term,
)
from lcswitch.params import FockCutoffs, ScalingPlan, Scheme, SystemParams
from lcswitch.qjump import (
    Channel,
    EnsembleSpec,
    InitialStatePolicy,
    _Engine,
    jump_probabilities,
    simulate_ensemble,
    simulate_trajectory,
    stationary_density,
    step,
    trajectory_seed,
)


def cavity_params(**kw):
    base = dict(delta_a=-0.7, omega_b=1.0, g=0.0, f=0.0, kappa_a=0.1, kappa_b=0.0)
    base.update(kw)
    return SystemParams(**base)


class FixedDraw:
    """Stub RNG returning a preset sequence of uniforms."""

    def __init__(self, values):
        self.values = list(values)

    def random(self, n=None):
        assert n is None
        return self.values.pop(0)


def test_jump_probability_formula():
    p = cavity_params(kappa_a=0.1, kappa_b=0.0, delta_a=0.0)
    cut = FockCutoffs(6, 1)
    eng = _Engine.build(p, cut)
    psi = fock_state(2, 0, cut).amplitudes
    p_a, p_b = jump_probabilities(psi, eng, dt=0.01)
    assert p_a == pytest.approx(0.002)
    assert p_b == 0.0


def test_forced_jump_collapses_fock_state():
    # diagonal Hamiltonian: the pre/post evolution only rescales the norm,
    # so the collapse of |2,0> lands exactly on |1,0>
    p = cavity_params(delta_a=0.0, kappa_a=0.2)
    cut = FockCutoffs(4, 1)
    eng = _Engine.build(p, cut)
    psi = fock_state(2, 0, cut).amplitudes
    out, ev = step(psi, eng, 0.01, FixedDraw([0.0]))
    assert ev is not None
    assert ev.channel == Channel.OPTICAL
    expected = fock_state(1, 0, cut).amplitudes
    assert np.allclose(out, expected, atol=1e-12)


def test_no_jump_when_dissipationless():
    p = SystemParams(delta_a=0.3, omega_b=1.0, g=0.0, f=0.1,
                     kappa_a=1e-300, kappa_b=0.0)
    cut = FockCutoffs(4, 1)
    eng = _Engine.build(p, cut)
    psi = coherent_state(0.5, 0.0, cut).amplitudes
    rng = np.random.default_rng(0)
    drift = 0.0
    dt = 0.005
    for k in range(200):  # one time unit
        raw = eng.rk4_raw(psi, dt)
        drift = max(drift, abs(np.linalg.norm(raw) - 1.0))
        psi, ev = step(psi, eng, dt, rng)
        assert ev is None
    assert drift < 1e-10


def test_norm_decay_monotone_between_jumps():
    p = cavity_params(kappa_a=0.3)
    cut = FockCutoffs(8, 1)
    eng = _Engine.build(p, cut)
    psi = coherent_state(1.5, 0.0, cut).amplitudes
    norms = [1.0]
    for _ in range(400):
        psi = eng.rk4_raw(psi, 0.01)
        norms.append(np.linalg.norm(psi))
    diffs = np.diff(norms)
    assert np.all(diffs <= 1e-15)


def test_step_subdivides_when_cap_exceeded():
    p = cavity_params(kappa_a=1.0, delta_a=0.0)
    cut = FockCutoffs(12, 1)
    eng = _Engine.build(p, cut)
    psi = fock_state(10, 0, cut).amplitudes
    # kappa <n> dt = 10 * 0.02 = 0.2 > cap: the step must subdivide, not fail
    out, ev = step(psi, eng, 0.02, np.random.default_rng(5))
    assert out.shape == psi.shape
    with pytest.raises(StepError):
        step(psi, eng, 0.02, np.random.default_rng(5), max_subdivisions=1)


def test_trajectory_determinism(working_point):
    plan = ScalingPlan(aleph=2.0, scheme=Scheme.THEORY_A, base=working_point)
    cut = FockCutoffs(10, 8)
    spec = EnsembleSpec(n_traj=1, t_transient=0.0, t_total_post=30.0, dt_sample=1.0)
    seed = trajectory_seed(123, 0)
    r1 = simulate_trajectory(spec, plan, cut, seed)
    r2 = simulate_trajectory(spec, plan, cut, seed)
    assert np.array_equal(r1.n_a, r2.n_a)
    assert np.array_equal(r1.alpha, r2.alpha)
    assert np.array_equal(r1.jump_times, r2.jump_times)
    assert np.array_equal(r1.jump_channels, r2.jump_channels)


def test_ensemble_worker_count_invariance(working_point):
    plan = ScalingPlan(aleph=1.0, scheme=Scheme.THEORY_A, base=working_point)
    cut = FockCutoffs(8, 6)
    spec = EnsembleSpec(n_traj=3, t_transient=0.0, t_total_post=10.0, dt_sample=1.0)
    serial = simulate_ensemble(spec, plan, cut, master_seed=7, workers=1)
    parallel = simulate_ensemble(spec, plan, cut, master_seed=7, workers=2)
    for r1, r2 in zip(serial, parallel):
        assert np.array_equal(r1.n_a, r2.n_a)
        assert np.array_equal(r1.jump_times, r2.jump_times)


def test_decaying_cavity_jump_count_exact():
    """Every quantum of an initial Fock state is emitted exactly once."""
    p = cavity_params(delta_a=0.0)
    plan = ScalingPlan(aleph=1.0, scheme=Scheme.THEORY_A, base=p)
    cut = FockCutoffs(4, 1)
    spec = EnsembleSpec(n_traj=10, t_transient=0.0, t_total_post=400.0, dt_sample=4.0,
                        policy=InitialStatePolicy(kind="fock", n_a=3))
    recs = simulate_ensemble(spec, plan, cut, master_seed=11)
    for r in recs:
        assert len(r.jump_times) == 3
        assert np.all(r.jump_channels == Channel.OPTICAL)
        assert np.all(np.diff(r.jump_times) > 0)


def test_damped_cavity_ensemble_mean():
    """Ensemble mean population follows the analytic decay law."""
    p = cavity_params()
    plan = ScalingPlan(aleph=1.0, scheme=Scheme.THEORY_A, base=p)
    cut = FockCutoffs(20, 1)
    spec = EnsembleSpec(n_traj=120, t_transient=0.0, t_total_post=20.0, dt_sample=0.5,
                        policy=InitialStatePolicy(kind="fixed", alpha0=2.0))
    recs = simulate_ensemble(spec, plan, cut, master_seed=7)
    na = np.stack([r.n_a for r in recs])
    t = recs[0].t
    exact = 4.0 * np.exp(-p.kappa_a * t)
    # coherent-state trajectories are nearly deterministic here, so allow a
    # numerical floor alongside the statistical error
    se = na.std(axis=0, ddof=1) / np.sqrt(len(recs))
    assert np.all(np.abs(na.mean(axis=0) - exact) < 3 * np.maximum(se, 1e-5))


def test_rescaling_of_observables(working_point):
    """Populations divide by aleph, amplitudes by sqrt(aleph)."""
    base = SystemParams(delta_a=-0.7, omega_b=1.0, g=0.0, f=0.0,
                        kappa_a=0.1, kappa_b=0.0)
    cut = FockCutoffs(24, 1)
    spec = EnsembleSpec(n_traj=1, t_transient=0.0, t_total_post=1.0, dt_sample=1.0,
                        policy=InitialStatePolicy(kind="fixed", alpha0=2.0))
    plan = ScalingPlan(aleph=4.0, scheme=Scheme.THEORY_A, base=base)
    rec = simulate_trajectory(spec, plan, cut, trajectory_seed(0, 0))
    assert rec.n_a[0] == pytest.approx(4.0 / 4.0, rel=1e-9)
    assert rec.alpha[0] == pytest.approx(2.0 / 2.0, rel=1e-9)


def test_adjoint_scheme_reports_scaled_time(working_point):
    base = cavity_params()
    plan = ScalingPlan(aleph=4.0, scheme=Scheme.ADJOINT_B, base=base)
    cut = FockCutoffs(6, 1)
    spec = EnsembleSpec(n_traj=1, t_transient=0.0, t_total_post=10.0, dt_sample=1.0)
    rec = simulate_trajectory(spec, plan, cut, trajectory_seed(3, 0))
    # times multiplied by sqrt(aleph) = 2
    assert rec.t[1] - rec.t[0] == pytest.approx(2.0)
    assert rec.dt_sample == pytest.approx(2.0)


def test_master_equation_equivalence_small_system():
    """Trajectory average of a driven, damped single mode matches the dense
    density-matrix integration within Monte Carlo error.

    A number-state start makes the collapse genuinely stochastic (a coherent
    start would leave every trajectory identical and the 3-sigma comparison
    degenerate).
    """
    p = SystemParams(delta_a=-0.5, omega_b=1.0, g=0.0, f=0.3,
                     kappa_a=0.2, kappa_b=0.0)
    cut = FockCutoffs(6, 1)
    ops = mode_operators(cut)
    h = (build_hamiltonian(p, cut) + position_damping_term(p, cut)).toarray()
    a = ops["a"].toarray()
    na = ops["num_a"].toarray().real
    dim = cut.dim

    def lindblad(t, y):
        rho = y.reshape(dim, dim)
        out = -1j * (h @ rho - rho @ h)
        ad = a.conj().T
        out = out + p.kappa_a * (a @ rho @ ad - 0.5 * (ad @ a @ rho + rho @ ad @ a))
        return out.ravel()

    psi0 = fock_state(3, 0, cut).amplitudes
    rho0 = np.outer(psi0, psi0.conj())
    tchk = np.linspace(2.0, 20.0, 10)
    sol = solve_ivp(lindblad, (0.0, 20.0), rho0.ravel(), t_eval=tchk,
                    rtol=1e-9, atol=1e-11)
    me = np.array([np.trace(na @ r).real
                   for r in sol.y.T.reshape(len(tchk), dim, dim)])

    plan = ScalingPlan(aleph=1.0, scheme=Scheme.THEORY_A, base=p)
    spec = EnsembleSpec(n_traj=300, t_transient=0.0, t_total_post=20.0, dt_sample=0.5,
                        policy=InitialStatePolicy(kind="fock", n_a=3))
    recs = simulate_ensemble(spec, plan, cut, master_seed=99)
    tr = np.stack([r.n_a for r in recs])
    for tc, ref in zip(tchk, me):
        i = int(round(tc / 0.5))
        mean = tr[:, i].mean()
        se = tr[:, i].std(ddof=1) / np.sqrt(len(recs))
        assert abs(mean - ref) < 3 * max(se, 1e-4), f"t={tc}: {mean} vs {ref}"


def test_stationary_density_normalization(working_point):
    plan = ScalingPlan(aleph=1.0, scheme=Scheme.THEORY_A, base=working_point)
    cut = FockCutoffs(8, 6)
    spec = EnsembleSpec(n_traj=2, t_transient=5.0, t_total_post=40.0, dt_sample=1.0)
    recs = simulate_ensemble(spec, plan, cut, master_seed=21)
    for proj in ("optical", "mechanical", "population"):
        d = stationary_density(recs, projection=proj, bins=32)
        assert d.integral() == pytest.approx(1.0, abs=1e-12)


def test_stationary_density_single_point():
    rec_args = dict(
        seed=1, aleph=1.0, scheme="a", cutoffs=(4, 4), dt_sample=1.0,
        transient_cut=0.0, jump_times=np.array([]), jump_channels=np.array([], dtype=np.uint8),
    )
    from lcswitch.qjump import TrajectoryRecord

    n = 5
    rec = TrajectoryRecord(
        t=np.arange(n, dtype=float),
        n_a=np.full(n, 1.25), n_b=np.full(n, 0.5),
        alpha=np.full(n, 0.3 + 0.1j), beta=np.full(n, 0.0j),
        **rec_args,
    )
    d = stationary_density([rec], projection="population", bins=16,
                           ranges=((0.0, 2.0), (0.0, 2.0)))
    assert np.count_nonzero(d.values) == 1
    assert d.integral() == pytest.approx(1.0)


def test_ensemble_spec_defaults_resolve():
    spec = EnsembleSpec(n_traj=2).resolved(kappa_a=0.1)
    assert spec.t_transient == pytest.approx(5000.0)
    assert spec.t_total_post == pytest.approx(20000.0)
    assert spec.dt_sample == pytest.approx(1.0)


def test_convergence_check_reports(working_point):
    from lcswitch.qjump import convergence_check

    p = SystemParams(delta_a=-0.5, omega_b=1.0, g=0.0, f=0.3,
                     kappa_a=0.2, kappa_b=0.0)
    plan = ScalingPlan(aleph=1.0, scheme=Scheme.THEORY_A, base=p)
    spec = EnsembleSpec(n_traj=4, t_transient=5.0, t_total_post=40.0,
                        dt_sample=1.0,
                        policy=InitialStatePolicy(kind="fixed", alpha0=0.8))
    report = convergence_check(spec, plan, FockCutoffs(8, 1), master_seed=3)
    # a linear cavity at <n> ~ 1 is fully converged by n_max = 8
    assert report["converged"]
    assert report["rel_change"][0] < 0.01
