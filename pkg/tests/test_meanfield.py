import numpy as np
import pytest

from lcswitch.errors import AttractorNotFoundError
from lcswitch.meanfield import (
    CellLabel,
    IntegrationControls,
    MeanFieldState,
    classify_point,
    cluster_diagnostics,
    extract_limit_cycles,
    initial_condition_disk,
    integrate,
    meanfield_rhs,
)
from lcswitch.params import SystemParams

FAST = IntegrationControls(t_final=3000.0, n_window=2048)


def test_rhs_direct_evaluation():
    p = SystemParams(delta_a=-0.7, omega_b=1.0, g=0.0, f=0.0, kappa_a=0.1, kappa_b=0.01)
    d = meanfield_rhs(MeanFieldState(alpha=1.0, beta=0.0), p)
    assert d.alpha == pytest.approx(0.7j - 0.05)
    assert d.beta == 0.0


def test_rhs_fixed_point_condition():
    for f in (0.1, 0.5, 2.0):
        p = SystemParams(delta_a=-0.7, omega_b=1.0, g=0.0, f=f, kappa_a=0.1, kappa_b=0.01)
        alpha_star = -f / (p.delta_a - 0.5j * p.kappa_a)
        d = meanfield_rhs(MeanFieldState(alpha=alpha_star, beta=0.0), p)
        assert abs(d.alpha) < 1e-14


def test_rhs_at_origin(working_point):
    d = meanfield_rhs(MeanFieldState(alpha=0.0, beta=0.0), working_point)
    assert d.alpha == pytest.approx(-1j * working_point.f)
    assert d.beta == 0.0


def test_integrate_linear_decay_oracle():
    """g = F = 0 leaves a damped rotation: |alpha| = |alpha_0| e^{-kappa t/2}."""
    p = SystemParams(delta_a=-0.7, omega_b=1.0, g=0.0, f=0.0, kappa_a=0.1, kappa_b=0.0)
    traj = integrate(MeanFieldState(alpha=2.0, beta=0.0), p, t_final=30.0)
    expected = 2.0 * np.exp(-0.05 * traj.t)
    assert np.allclose(np.abs(traj.alpha), expected, rtol=1e-6)


def test_integrate_norm_conserved_without_dissipation():
    p = SystemParams(delta_a=-0.7, omega_b=1.0, g=0.0, f=0.0,
                     kappa_a=1e-300, kappa_b=0.0)
    traj = integrate(MeanFieldState(alpha=1.5, beta=0.5), p, t_final=100.0,
                     controls=IntegrationControls(rtol=1e-10, atol=1e-12))
    assert np.all(np.abs(np.abs(traj.alpha) - 1.5) < 1e-8)
    assert np.all(np.abs(np.abs(traj.beta) - 0.5) < 1e-8)


def test_integrate_working_point_is_dynamical(working_point):
    """Late-time motion at the working point oscillates in both modes."""
    traj = integrate(MeanFieldState(alpha=3.0, beta=0.0), working_point,
                     t_final=3000.0,
                     t_eval=np.linspace(2700.0, 3000.0, 4096))
    d_alpha = np.ptp(traj.alpha.real)
    d_beta = np.ptp(traj.beta.real)
    assert d_alpha > 5e-3
    assert d_beta > 5e-3


def test_initial_condition_disk_layout():
    grid = initial_condition_disk()
    assert len(grid) == 157
    assert grid[0] == 0.0
    radii = np.abs(grid)
    assert radii.max() <= 5.0 + 1e-12
    # ring populations proportional to radius
    for r, count in zip((1, 2, 3, 4, 5), (10, 21, 31, 42, 52)):
        assert np.sum(np.isclose(radii, r)) == count


def test_cluster_diagnostics_merges_within_tolerance():
    vecs = np.array([[0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 1.005, 1.005]])
    labels = cluster_diagnostics(vecs, tol=1e-2)
    assert labels.tolist() == [0, 0]
    vecs2 = np.array([[0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 1.02, 1.0]])
    assert cluster_diagnostics(vecs2, tol=1e-2).tolist() == [0, 1]


def test_classify_working_point_two_cycles(working_point):
    cell = classify_point(working_point.delta_a, working_point.f, working_point,
                          controls=FAST)
    assert cell.label is CellLabel.LC2
    assert cell.n_failed == 0
    dyn = [a for a in cell.attractors if a.is_dynamical]
    assert len(dyn) == 2


def test_classify_undriven_single_fixed_point(working_point):
    cell = classify_point(-0.5, 0.0, working_point, controls=FAST)
    assert cell.label is CellLabel.FP1
    att = cell.attractors[0]
    assert att.mean_n_a == pytest.approx(0.0, abs=1e-6)
    assert att.mean_n_b == pytest.approx(0.0, abs=1e-6)


def test_classify_deterministic_under_permutation(working_point, rng):
    grid = initial_condition_disk(n_init=40)
    cell1 = classify_point(working_point.delta_a, working_point.f, working_point,
                           grid=grid, controls=FAST)
    cell2 = classify_point(working_point.delta_a, working_point.f, working_point,
                           grid=rng.permutation(grid), controls=FAST)
    assert cell1.label == cell2.label
    assert len(cell1.attractors) == len(cell2.attractors)


def test_refined_grid_never_loses_attractors(working_point):
    coarse = classify_point(working_point.delta_a, working_point.f, working_point,
                            grid=initial_condition_disk(n_init=40), controls=FAST)
    fine = classify_point(working_point.delta_a, working_point.f, working_point,
                          grid=initial_condition_disk(n_init=80), controls=FAST)
    assert len(fine.attractors) >= len(coarse.attractors)


@pytest.fixture(scope="module")
def orbits(working_point):
    return extract_limit_cycles(working_point, controls=FAST)


def test_two_limit_cycles_ordered(orbits):
    assert len(orbits) == 2
    lc1, lc2 = orbits
    assert lc1.mean_n_a < lc2.mean_n_a


def test_orbit_closure(orbits):
    for orbit in orbits:
        assert orbit.closure_error() < 1e-6


def test_orbit_single_dominant_frequency(orbits):
    """One fundamental plus harmonics: all strong spectral lines sit at
    integer multiples of the orbit frequency."""
    for orbit in orbits:
        x = orbit.alpha.real[:-1] - orbit.alpha.real[:-1].mean()
        # sample 8 periods so harmonics land exactly on bins
        tiled = np.tile(x, 8)
        spec = np.abs(np.fft.rfft(tiled)) ** 2
        spec[0] = 0.0
        fund = np.argmax(spec)
        strong = np.nonzero(spec > 1e-6 * spec[fund])[0]
        assert fund == 8  # one cycle per period tile
        assert np.all(strong % fund == 0)


def test_no_cycle_in_fixed_point_region(working_point):
    with pytest.raises(AttractorNotFoundError):
        extract_limit_cycles(
            SystemParams.working_point(f=0.0), controls=FAST,
        )
