import numpy as np
import pytest
from scipy.stats import multivariate_normal

from lcswitch.errors import DegenerateClusterError, NumericalError
from lcswitch.hmm import (
    COV_FLOOR,
    HmmParams,
    ObservationSet,
    TrainingControls,
    baum_welch,
    build_observations,
    canonical_order,
    kmeans_init,
    run_length_decode,
    run_length_encode,
    separation_reliable,
    viterbi,
)


def make_obs(seqs):
    pooled = np.concatenate(seqs)
    mu, sd = pooled.mean(axis=0), pooled.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return ObservationSet(
        raw=tuple(seqs),
        standardized=tuple((s - mu) / sd for s in seqs),
        mean=mu,
        std=sd,
    )


def sample_hmm(rng, pi, a, means, covs, t_len):
    states = np.empty(t_len, dtype=int)
    obs = np.empty((t_len, means.shape[1]))
    states[0] = rng.choice(len(pi), p=pi)
    for t in range(1, t_len):
        states[t] = rng.choice(len(pi), p=a[states[t - 1]])
    for k in range(len(pi)):
        idx = states == k
        if idx.any():
            obs[idx] = rng.multivariate_normal(means[k], covs[k], size=idx.sum())
    return states, obs


def test_kmeans_separable_point_masses():
    seqs = [
        np.array([[0.0, 0.0]] * 30 + [[10.0, 10.0]] * 30),
        np.array([[10.0, 10.0]] * 20 + [[0.0, 0.0]] * 20),
    ]
    obs = make_obs(seqs)
    params = kmeans_init(obs, seed=3)
    # means recovered exactly (in standardized coordinates both clusters are
    # point masses) and the transition prior is uniform
    back = params.means * obs.std + obs.mean
    assert np.allclose(sorted(back[:, 0]), [0.0, 10.0], atol=1e-12)
    assert np.allclose(params.a, 0.5)
    # covariance floored for point-mass clusters
    for c in params.covs:
        assert np.linalg.eigvalsh(c).min() == pytest.approx(COV_FLOOR)


def test_kmeans_start_frequencies():
    seqs = [np.array([[0.0, 0.0]] * 10), np.array([[10.0, 10.0]] * 10),
            np.array([[10.0, 10.0]] * 10), np.array([[0.0, 0.0]] * 10)]
    params = kmeans_init(make_obs(seqs), seed=0)
    assert np.allclose(sorted(params.pi), [0.5, 0.5])


def test_kmeans_degenerate_data_raises():
    seqs = [np.ones((20, 2))]
    with pytest.raises(DegenerateClusterError):
        kmeans_init(make_obs(seqs), seed=0)


def test_baum_welch_recovers_synthetic_rates(rng):
    a_true = np.array([[0.98, 0.02], [0.05, 0.95]])
    means = np.array([[0.0, 0.0], [3.0, 4.0]])
    covs = np.array([np.eye(2) * 0.3, np.eye(2) * 0.5])
    seqs = [sample_hmm(rng, [0.5, 0.5], a_true, means, covs, 5000)[1]
            for _ in range(10)]
    obs = make_obs(seqs)
    result = baum_welch(kmeans_init(obs, seed=1), obs)
    assert result.converged
    a = result.params.a
    assert a[0, 1] == pytest.approx(0.02, rel=0.2)
    assert a[1, 0] == pytest.approx(0.05, rel=0.2)
    assert result.separation_reliable


def test_baum_welch_monotone_loglik(rng):
    a_true = np.array([[0.9, 0.1], [0.2, 0.8]])
    means = np.array([[0.0, 0.0], [1.5, 1.0]])
    covs = np.array([np.eye(2), np.eye(2) * 0.7])
    seqs = [sample_hmm(rng, [0.5, 0.5], a_true, means, covs, 400)[1]
            for _ in range(4)]
    obs = make_obs(seqs)
    result = baum_welch(kmeans_init(obs, seed=2), obs,
                        TrainingControls(max_iter=60, rel_tol=0.0))
    trace = np.array(result.trace)
    assert np.all(np.diff(trace) >= -1e-9)


def test_baum_welch_rowstochastic_and_spd(rng):
    seqs = [rng.standard_normal((300, 2)) + np.array([i % 2 * 2.0, 0.0])
            for i in range(4)]
    obs = make_obs(seqs)
    result = baum_welch(kmeans_init(obs, seed=0), obs,
                        TrainingControls(max_iter=40))
    assert np.allclose(result.params.a.sum(axis=1), 1.0, atol=1e-10)
    assert result.params.pi.sum() == pytest.approx(1.0)
    for c in result.params.covs:
        assert np.linalg.eigvalsh(c).min() >= 0.5 * COV_FLOOR


def test_per_sequence_boundaries_do_not_transition():
    """Likelihood is computed per sequence and summed: two sequences score
    identically to the same data under any boundary-crossing rearrangement
    only if transitions never span the boundary."""
    params = HmmParams(
        pi=np.array([0.5, 0.5]),
        a=np.array([[0.99, 0.01], [0.01, 0.99]]),
        means=np.array([[0.0, 0.0], [8.0, 8.0]]),
        covs=np.array([np.eye(2), np.eye(2)]),
    )
    lo = np.zeros((50, 2))
    hi = np.full((50, 2), 8.0)
    obs_split = ObservationSet(raw=(lo, hi), standardized=(lo, hi),
                               mean=np.zeros(2), std=np.ones(2))
    obs_joined = ObservationSet(raw=(np.vstack([lo, hi]),),
                                standardized=(np.vstack([lo, hi]),),
                                mean=np.zeros(2), std=np.ones(2))
    from lcswitch.hmm import _emission_logprobs, _forward_backward

    ll_split = sum(
        _forward_backward(params, _emission_logprobs(params, s))[0]
        for s in obs_split.standardized
    )
    ll_joined = _forward_backward(
        params, _emission_logprobs(params, obs_joined.standardized[0])
    )[0]
    # the joined sequence pays for one boundary transition; the split pair
    # instead pays a second initial-state factor
    trans_cost = np.log(0.01)
    init_cost = np.log(0.5)
    assert ll_joined - ll_split == pytest.approx(trans_cost - init_cost, abs=1e-9)


def brute_force_viterbi(params, seq):
    t_len = len(seq)
    best_path, best_ll = None, -np.inf
    logb = np.stack(
        [np.atleast_1d(multivariate_normal.logpdf(seq, params.means[k], params.covs[k]))
         for k in (0, 1)], axis=1,
    )
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
        log_a = np.log(params.a)
    for code in range(2**t_len):
        path = [(code >> i) & 1 for i in range(t_len)]
        ll = log_pi[path[0]] + logb[0, path[0]]
        for t in range(1, t_len):
            ll += log_a[path[t - 1], path[t]] + logb[t, path[t]]
        if ll > best_ll:  # strict: ties keep the earlier (lexicographic) path
            best_path, best_ll = path, ll
    return np.array(best_path), best_ll


def test_viterbi_matches_brute_force(rng):
    for trial in range(100):
        t_len = int(rng.integers(1, 11))
        pi = rng.dirichlet([1.0, 1.0])
        a = rng.dirichlet([1.0, 1.0], size=2)
        means = rng.standard_normal((2, 2)) * 2
        covs = np.array([np.eye(2) * rng.uniform(0.2, 2.0) for _ in range(2)])
        params = HmmParams(pi=pi, a=a, means=means, covs=covs)
        seq = rng.standard_normal((t_len, 2))
        got = viterbi(params, seq)
        want_path, want_ll = brute_force_viterbi(params, seq)
        assert np.array_equal(got.labels, want_path), f"trial {trial}"
        assert got.log_likelihood == pytest.approx(want_ll, rel=1e-10)


def test_viterbi_tie_break_constant_path():
    params = HmmParams(
        pi=np.array([0.5, 0.5]),
        a=np.array([[0.5, 0.5], [0.5, 0.5]]),
        means=np.array([[0.0, 0.0], [0.0, 0.0]]),
        covs=np.array([np.eye(2), np.eye(2)]),
    )
    seq = np.zeros((6, 2))
    out = viterbi(params, seq)
    assert np.all(out.labels == 0)


def test_viterbi_invariant_under_affine_rescaling(rng):
    params = HmmParams(
        pi=np.array([0.3, 0.7]),
        a=np.array([[0.9, 0.1], [0.2, 0.8]]),
        means=np.array([[0.0, 0.0], [2.0, 1.0]]),
        covs=np.array([np.eye(2) * 0.5, np.eye(2) * 1.5]),
    )
    seq = rng.standard_normal((40, 2)) + 1.0
    base = viterbi(params, seq).labels
    scale = np.array([2.5, 0.4])
    shift = np.array([-1.0, 3.0])
    params2 = HmmParams(
        pi=params.pi,
        a=params.a,
        means=params.means * scale + shift,
        covs=np.array([np.diag(scale) @ c @ np.diag(scale) for c in params.covs]),
    )
    assert np.array_equal(viterbi(params2, seq * scale + shift).labels, base)


def test_canonical_order_swaps_consistently():
    params = HmmParams(
        pi=np.array([0.2, 0.8]),
        a=np.array([[0.9, 0.1], [0.3, 0.7]]),
        means=np.array([[5.0, 0.0], [1.0, 0.0]]),
        covs=np.array([np.eye(2) * 2.0, np.eye(2)]),
    )
    fixed = canonical_order(params)
    assert fixed.means[0, 0] < fixed.means[1, 0]
    assert fixed.pi.tolist() == [0.8, 0.2]
    assert fixed.a[0, 1] == pytest.approx(0.3)
    assert fixed.a[1, 0] == pytest.approx(0.1)
    assert fixed.covs[0][0, 0] == pytest.approx(1.0)


def test_separation_guard():
    close = HmmParams(
        pi=np.array([0.5, 0.5]),
        a=np.full((2, 2), 0.5),
        means=np.array([[0.0, 0.0], [0.1, 0.0]]),
        covs=np.array([np.eye(2), np.eye(2)]),
    )
    assert not separation_reliable(close)
    far = HmmParams(
        pi=np.array([0.5, 0.5]),
        a=np.full((2, 2), 0.5),
        means=np.array([[0.0, 0.0], [5.0, 0.0]]),
        covs=np.array([np.eye(2), np.eye(2)]),
    )
    assert separation_reliable(far)


def test_run_length_roundtrip(rng):
    labels = (rng.random(200) < 0.3).astype(np.int8)
    runs = run_length_encode(labels)
    assert np.array_equal(run_length_decode(runs), labels)
    assert all(length > 0 for _, length, _ in runs)
