import numpy as np
import pytest

from lcswitch.errors import FitRefusedError, NoLinearTailError
from lcswitch.hmm import LC1, LC2, StateSequence
from lcswitch.survival import (
    DwellRecord,
    SurvivalCurve,
    extract_dwells,
    fit_conditional_rate,
    incident,
    kaplan_meier,
    select_t0,
)


def seq(labels):
    return StateSequence(labels=np.asarray(labels, dtype=np.int8), log_likelihood=0.0)


def rec(duration, observed=True, state=LC1):
    return DwellRecord(state=state, duration=duration,
                       entry_observed=True, exit_observed=observed)


def test_extract_dwells_example():
    """Labels 1,1,2,2,2,1 at dt=1: the leading run is entry-unobserved, the
    middle run is a complete visit, the final run is right-censored."""
    dwells = extract_dwells([seq([0, 0, 1, 1, 1, 0])], dt_sample=1.0)
    assert len(dwells) == 3
    lead, mid, last = dwells
    assert not lead.entry_observed
    assert mid.state == LC2 and mid.duration == 3.0
    assert mid.entry_observed and mid.exit_observed
    assert last.state == LC1 and last.duration == 1.0
    assert last.entry_observed and not last.exit_observed
    inc = incident(dwells)
    assert len(inc) == 2


def test_constant_trajectory_has_no_incident_records():
    dwells = extract_dwells([seq([1] * 50)], dt_sample=0.5)
    assert len(dwells) == 1
    assert incident(dwells) == []


def test_dwells_never_span_trajectories():
    dwells = extract_dwells([seq([0, 0, 1]), seq([1, 0, 0])], dt_sample=1.0)
    trajs = {d.trajectory for d in dwells}
    assert trajs == {0, 1}
    # last run of traj 0 and first run of traj 1 share the state but stay split
    t0_last = [d for d in dwells if d.trajectory == 0][-1]
    t1_first = [d for d in dwells if d.trajectory == 1][0]
    assert t0_last.state == LC2 and not t0_last.exit_observed
    assert t1_first.state == LC2 and not t1_first.entry_observed


def test_kaplan_meier_hand_computed_table():
    dwells = [rec(1.0), rec(2.0), rec(2.5, observed=False)]
    curve = kaplan_meier(dwells)
    assert curve.times.tolist() == [1.0, 2.0]
    assert curve.survival[0] == pytest.approx(2.0 / 3.0)
    assert curve.survival[1] == pytest.approx(1.0 / 3.0)
    assert curve.at_risk.tolist() == [3, 2]
    assert curve.value(0.5) == 1.0
    assert curve.value(1.0) == pytest.approx(2.0 / 3.0)


def test_kaplan_meier_all_censored():
    curve = kaplan_meier([rec(1.0, observed=False), rec(2.0, observed=False)])
    assert len(curve.times) == 0
    assert curve.value(5.0) == 1.0


def test_kaplan_meier_no_censoring_equals_ecdf(rng):
    durations = rng.exponential(10.0, size=200)
    curve = kaplan_meier([rec(d) for d in durations])
    for t, s in zip(curve.times, curve.survival):
        ecdf_tail = np.mean(durations > t)
        assert s == pytest.approx(ecdf_tail, abs=1e-14)


def test_conditional_mle_closed_form():
    t0 = 2.0
    dwells = [rec(t0 + 1.0), rec(t0 + 2.0), rec(t0 + 3.0)]
    fit = fit_conditional_rate(dwells, t0, min_records=3, n_boot=50)
    assert fit.k == pytest.approx(0.5)
    assert fit.n_events == 3

    dwells.append(rec(t0 + 4.0, observed=False))
    fit = fit_conditional_rate(dwells, t0, min_records=3, n_boot=50)
    assert fit.k == pytest.approx(0.3)
    assert fit.n_censored == 1


def test_conditional_mle_ignores_short_records():
    t0 = 5.0
    dwells = [rec(t0 + 1.0), rec(t0 + 2.0), rec(t0 + 3.0)]
    with_short = dwells + [rec(0.5), rec(4.9), rec(5.0)]
    f1 = fit_conditional_rate(dwells, t0, min_records=3, n_boot=50,
                              rng=np.random.default_rng(0))
    f2 = fit_conditional_rate(with_short, t0, min_records=3, n_boot=50,
                              rng=np.random.default_rng(0))
    assert f1.k == f2.k
    assert f1.ci_low == f2.ci_low


def test_mle_recovers_synthetic_rate(rng):
    k_true = 0.05
    dwells = [rec(d) for d in rng.exponential(1.0 / k_true, size=5000)]
    fit = fit_conditional_rate(dwells, 0.0, rng=rng)
    assert fit.k == pytest.approx(k_true, rel=0.03)
    assert fit.ci_low <= fit.k <= fit.ci_high


def test_fit_refused_below_minimum():
    with pytest.raises(FitRefusedError):
        fit_conditional_rate([rec(1.0)] * 5, 0.0, min_records=20)


def sample_mixture(rng, n, w_fast, k_fast=10.0, k_slow=0.1):
    fast = rng.random(n) < w_fast
    out = np.where(fast, rng.exponential(1.0 / k_fast, n),
                   rng.exponential(1.0 / k_slow, n))
    return out


def test_select_t0_pure_exponential(rng):
    dwells = [rec(d) for d in rng.exponential(10.0, size=5000)]
    sel = select_t0(kaplan_meier(dwells))
    # first candidate accepted: essentially no conditioning needed
    assert sel.quantile == 0.0
    assert sel.t0 == 0.0


def test_select_t0_excludes_fast_component(rng):
    durations = sample_mixture(rng, 30000, w_fast=0.5)
    sel = select_t0(kaplan_meier([rec(d) for d in durations]))
    # the fast flicker component (rate 10) must be nearly gone beyond t0
    assert np.exp(-10.0 * sel.t0) <= 0.05
    # and t0 must not over-prune: the slow component survives
    assert np.exp(-0.1 * sel.t0) > 0.8


def test_select_t0_monotone_in_flicker_weight(rng):
    t0s = []
    for w in (0.1, 0.3, 0.5, 0.7):
        durations = sample_mixture(np.random.default_rng(13), 30000, w_fast=w)
        sel = select_t0(kaplan_meier([rec(d) for d in durations]))
        t0s.append(sel.t0)
    assert all(b >= a for a, b in zip(t0s, t0s[1:])), t0s


def test_select_t0_flags_hopeless_curve():
    # too few events to scan
    dwells = [rec(float(i + 1)) for i in range(4)]
    with pytest.raises(NoLinearTailError):
        select_t0(kaplan_meier(dwells))
