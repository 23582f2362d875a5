"""Two-state Gaussian hidden Markov model for metastable-state segmentation.

Observations are the square roots of the rescaled mode populations, globally
standardized across the whole ensemble.  Training maximizes the summed
log-likelihood over all sequences (scaled forward-backward); decoding is
per-sequence Viterbi.  After training, states are canonically relabeled so
state 0 ("LC1") is the component with the smaller mean in the first feature.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DegenerateClusterError,
    InvalidParameterError,
    NumericalError,
)
from .qjump import TrajectoryRecord

LC1, LC2 = 0, 1

#: Covariance eigenvalues are floored here to keep emissions non-degenerate.
COV_FLOOR = 1e-8
_LOG2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ObservationSet:
    """Per-trajectory feature sequences plus the global standardization."""

    raw: tuple[np.ndarray, ...]
    standardized: tuple[np.ndarray, ...]
    mean: np.ndarray
    std: np.ndarray

    @property
    def n_sequences(self) -> int:
        return len(self.raw)


def build_observations(
    records: list[TrajectoryRecord], post_transient: bool = True
) -> ObservationSet:
    """Feature sequences (sqrt n_a, sqrt n_b) with ensemble-global standardization."""
    raw = []
    for r in records:
        sl = r.post_transient_slice() if post_transient else slice(None)
        raw.append(np.column_stack([np.sqrt(r.n_a[sl]), np.sqrt(r.n_b[sl])]))
    pooled = np.concatenate(raw, axis=0)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    standardized = tuple((x - mean) / std for x in raw)
    return ObservationSet(raw=tuple(raw), standardized=standardized, mean=mean, std=std)


@dataclass(frozen=True)
class HmmParams:
    """Initial distribution, transition matrix, and Gaussian emissions."""

    pi: np.ndarray  # (2,)
    a: np.ndarray  # (2, 2), row stochastic
    means: np.ndarray  # (2, d)
    covs: np.ndarray  # (2, d, d), symmetric positive definite

    def validate(self) -> None:
        if not np.allclose(self.a.sum(axis=1), 1.0, atol=1e-10):
            raise InvalidParameterError("transition rows must sum to 1")
        if not np.isclose(self.pi.sum(), 1.0, atol=1e-10):
            raise InvalidParameterError("pi must sum to 1")
        for c in self.covs:
            if np.linalg.eigvalsh(c).min() < 0.5 * COV_FLOOR:
                raise InvalidParameterError("covariance below the eigenvalue floor")


def _floor_cov(cov: np.ndarray, diagonal: bool = False) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    if diagonal:
        cov = np.diag(np.diag(cov))
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, COV_FLOOR)
    return (vecs * vals) @ vecs.T


def _kmeans_once(x: np.ndarray, rng: np.random.Generator, n_iter: int = 100):
    # k-means++ style seeding for k = 2
    n = len(x)
    first = rng.integers(n)
    d2 = np.sum((x - x[first]) ** 2, axis=1)
    total = d2.sum()
    if total == 0:
        raise DegenerateClusterError("all observations identical")
    second = rng.choice(n, p=d2 / total)
    centers = np.stack([x[first], x[second]])
    assign = np.zeros(n, dtype=int)
    for _ in range(n_iter):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        if np.array_equal(new_assign, assign) and _ > 0:
            break
        assign = new_assign
        for k in (0, 1):
            members = x[assign == k]
            if len(members):
                centers[k] = members.mean(axis=0)
    inertia = float(((x - centers[assign]) ** 2).sum())
    return centers, assign, inertia


def kmeans_init(
    observations: ObservationSet,
    seed: int = 0,
    n_restarts: int = 20,
    diagonal: bool = False,
) -> HmmParams:
    """K-means initialization of the emission model.

    Best of ``n_restarts`` k-means++ runs by inertia; emissions from cluster
    members; transitions uniform (non-informative prior); pi from the cluster
    assignment of each sequence's first observation.
    """
    x = np.concatenate(observations.standardized, axis=0)
    if len(np.unique(x, axis=0)) < 2:
        raise DegenerateClusterError("need at least 2 distinct observations")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_restarts):
        centers, assign, inertia = _kmeans_once(x, rng)
        if best is None or inertia < best[2]:
            best = (centers, assign, inertia)
    centers, assign, _ = best
    d = x.shape[1]
    means = np.empty((2, d))
    covs = np.empty((2, d, d))
    for k in (0, 1):
        members = x[assign == k]
        if len(members) == 0:
            raise DegenerateClusterError(f"k-means produced an empty cluster {k}")
        means[k] = members.mean(axis=0)
        diff = members - means[k]
        covs[k] = _floor_cov(diff.T @ diff / len(members), diagonal)
    # empirical start-state frequencies
    starts = np.array([seq[0] for seq in observations.standardized])
    dist = ((starts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    first_assign = dist.argmin(axis=1)
    pi = np.array([(first_assign == k).mean() for k in (0, 1)])
    a = np.full((2, 2), 0.5)
    return canonical_order(HmmParams(pi=pi, a=a, means=means, covs=covs))


def canonical_order(params: HmmParams) -> HmmParams:
    """Relabel so state LC1 has the smaller mean in the first feature."""
    if params.means[0, 0] <= params.means[1, 0]:
        return params
    perm = [1, 0]
    return HmmParams(
        pi=params.pi[perm],
        a=params.a[np.ix_(perm, perm)],
        means=params.means[perm],
        covs=params.covs[perm],
    )


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    chol = np.linalg.cholesky(cov)
    diff = x - mean
    y = solve_triangular(chol, diff.T, lower=True)
    maha = np.sum(y * y, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * _LOG2PI + logdet + maha)


def _emission_logprobs(params: HmmParams, seq: np.ndarray) -> np.ndarray:
    return np.stack(
        [_log_gauss(seq, params.means[k], params.covs[k]) for k in (0, 1)], axis=1
    )


def _forward_backward(params: HmmParams, logb: np.ndarray):
    """Scaled forward-backward.  Returns (loglik, gamma, xi_sum)."""
    t_len = logb.shape[0]
    b = np.exp(logb - logb.max(axis=1, keepdims=True))
    shift = logb.max(axis=1)
    alpha = np.empty((t_len, 2))
    scale = np.empty(t_len)
    alpha[0] = params.pi * b[0]
    scale[0] = alpha[0].sum()
    if scale[0] == 0:
        raise NumericalError("forward pass underflowed at t=0")
    alpha[0] /= scale[0]
    a = params.a
    for t in range(1, t_len):
        alpha[t] = (alpha[t - 1] @ a) * b[t]
        scale[t] = alpha[t].sum()
        if scale[t] == 0:
            raise NumericalError(f"forward pass underflowed at t={t}")
        alpha[t] /= scale[t]
    beta = np.empty((t_len, 2))
    beta[-1] = 1.0
    for t in range(t_len - 2, -1, -1):
        beta[t] = (a * (b[t + 1] * beta[t + 1])[None, :]).sum(axis=1) / scale[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi_sum = np.zeros((2, 2))
    for t in range(t_len - 1):
        m = (alpha[t][:, None] * a) * (b[t + 1] * beta[t + 1])[None, :] / scale[t + 1]
        xi_sum += m
    loglik = float(np.log(scale).sum() + shift.sum())
    return loglik, gamma, xi_sum


@dataclass(frozen=True)
class TrainingControls:
    max_iter: int = 500
    rel_tol: float = 1e-7
    covariance: str = "full"  # or "diag"
    pi_floor: float = 1e-12  # keeps one-sided empirical starts trainable


@dataclass(frozen=True)
class TrainingResult:
    params: HmmParams
    log_likelihood: float
    trace: tuple[float, ...]
    n_iter: int
    converged: bool
    separation_reliable: bool


def separation_reliable(params: HmmParams) -> bool:
    """Flag emission overlap: means closer than one pooled standard deviation.

    When this returns False the two-state segmentation is unreliable (the
    strongly fluctuating regime where the attractor structure washes out).
    """
    d = params.means.shape[1]
    pooled_var = float(np.trace(params.covs[0] + params.covs[1]) / (2 * d))
    sep = float(np.linalg.norm(params.means[0] - params.means[1]))
    return bool(sep >= np.sqrt(pooled_var))


def baum_welch(
    params0: HmmParams,
    observations: ObservationSet,
    controls: TrainingControls = TrainingControls(),
) -> TrainingResult:
    """Expectation-maximization over all sequences jointly.

    The summed log-likelihood is non-decreasing (raises NumericalError if an
    iteration lowers it by more than 1e-9); iteration stops on relative
    improvement below ``controls.rel_tol`` or at ``controls.max_iter``.
    """
    if observations.n_sequences < 1:
        raise InvalidParameterError("need at least one sequence")
    seqs = observations.standardized
    diagonal = controls.covariance == "diag"
    pi = np.maximum(params0.pi, controls.pi_floor)
    pi /= pi.sum()
    params = replace(params0, pi=pi)
    trace: list[float] = []
    prev = -np.inf
    converged = False
    for it in range(controls.max_iter):
        loglik = 0.0
        pi_acc = np.zeros(2)
        xi_acc = np.zeros((2, 2))
        gamma_from = np.zeros(2)  # occupancy of transitions' source states
        w_acc = np.zeros(2)
        mean_acc = np.zeros((2, seqs[0].shape[1]))
        sq_acc = np.zeros((2, seqs[0].shape[1], seqs[0].shape[1]))
        per_seq = []
        for seq in seqs:
            logb = _emission_logprobs(params, seq)
            ll, gamma, xi_sum = _forward_backward(params, logb)
            if not np.isfinite(ll):
                raise NumericalError(f"non-finite likelihood at iteration {it}")
            loglik += ll
            pi_acc += gamma[0]
            xi_acc += xi_sum
            gamma_from += gamma[:-1].sum(axis=0)
            w_acc += gamma.sum(axis=0)
            mean_acc += gamma.T @ seq
            per_seq.append(gamma)
        trace.append(loglik)
        if loglik < prev - 1e-9:
            raise NumericalError(
                f"log-likelihood decreased at iteration {it}: {prev} -> {loglik}"
            )
        if prev > -np.inf and abs(loglik - prev) <= controls.rel_tol * abs(prev):
            converged = True
            break
        prev = loglik
        # M step
        new_pi = pi_acc / observations.n_sequences
        new_a = xi_acc / np.maximum(gamma_from[:, None], 1e-300)
        new_a /= new_a.sum(axis=1, keepdims=True)
        new_means = mean_acc / w_acc[:, None]
        for si, seq in enumerate(seqs):
            gamma = per_seq[si]
            for k in (0, 1):
                diff = seq - new_means[k]
                sq_acc[k] += (gamma[:, k][:, None] * diff).T @ diff
        new_covs = np.stack(
            [_floor_cov(sq_acc[k] / w_acc[k], diagonal) for k in (0, 1)]
        )
        params = HmmParams(pi=new_pi, a=new_a, means=new_means, covs=new_covs)
    params = canonical_order(params)
    return TrainingResult(
        params=params,
        log_likelihood=trace[-1],
        trace=tuple(trace),
        n_iter=len(trace),
        converged=converged,
        separation_reliable=separation_reliable(params),
    )


@dataclass(frozen=True)
class StateSequence:
    """Decoded per-sample labels for one trajectory."""

    labels: np.ndarray  # int8 array of LC1/LC2
    log_likelihood: float
    start_index: int = 0  # sample offset of labels[0] within the source record


def viterbi(params: HmmParams, seq: np.ndarray, start_index: int = 0) -> StateSequence:
    """Most probable state path (log space); ties resolve to the lower state."""
    logb = _emission_logprobs(params, seq)
    t_len = logb.shape[0]
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
        log_a = np.log(params.a)
    delta = log_pi + logb[0]
    back = np.zeros((t_len, 2), dtype=np.int8)
    for t in range(1, t_len):
        cand = delta[:, None] + log_a  # cand[i, j]
        back[t] = cand.argmax(axis=0)  # argmax returns the lower index on ties
        delta = cand[back[t], [0, 1]] + logb[t]
    path = np.empty(t_len, dtype=np.int8)
    path[-1] = int(np.argmax(delta))
    for t in range(t_len - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return StateSequence(
        labels=path, log_likelihood=float(delta.max()), start_index=start_index
    )


def decode(
    params: HmmParams, observations: ObservationSet, records: list[TrajectoryRecord]
) -> list[StateSequence]:
    """Viterbi-decode every sequence, keeping each record's sample offset."""
    out = []
    for seq, rec in zip(observations.standardized, records):
        offset = rec.n_samples - len(seq)
        out.append(viterbi(params, seq, start_index=offset))
    return out


def segment_ensemble(
    records: list[TrajectoryRecord],
    seed: int = 0,
    controls: TrainingControls = TrainingControls(),
) -> tuple[TrainingResult, list[StateSequence]]:
    """Full segmentation: features, k-means init, training, decoding."""
    obs = build_observations(records)
    params0 = kmeans_init(obs, seed=seed)
    result = baum_welch(params0, obs, controls)
    return result, decode(result.params, obs, records)


def run_length_encode(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """(start_index, length, state) for each maximal constant-label run."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return []
    changes = np.nonzero(np.diff(labels))[0] + 1
    starts = np.concatenate(([0], changes))
    ends = np.concatenate((changes, [len(labels)]))
    return [(int(s), int(e - s), int(labels[s])) for s, e in zip(starts, ends)]


def run_length_decode(runs: list[tuple[int, int, int]]) -> np.ndarray:
    total = sum(r[1] for r in runs)
    out = np.empty(total, dtype=np.int8)
    for start, length, state in runs:
        out[start : start + length] = state
    return out
