"""Sparse operators and states on the truncated two-mode Fock space.

Basis layout is row major over (n_a, n_b) with n_b varying fastest:
``index = n_a * (n_b_max + 1) + n_b``.  This layout is fixed so stored
amplitudes are bit-exact reproducible across runs.  Operator builders are
cached per (params, cutoffs) pair because thousands of trajectories reuse
the same matrices.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError, InvalidParameterError
from .params import FockCutoffs, SystemParams


def basis_index(n_a: int, n_b: int, cutoffs: FockCutoffs) -> int:
    """Flat index of |n_a, n_b> in the product basis."""
    if not (0 <= n_a <= cutoffs.n_a_max and 0 <= n_b <= cutoffs.n_b_max):
        raise InvalidParameterError(f"({n_a}, {n_b}) outside cutoffs {cutoffs}")
    return n_a * (cutoffs.n_b_max + 1) + n_b


def _destroy(n_max: int) -> sp.csr_matrix:
    # entries sqrt(n) on the single superdiagonal: <n-1| a |n> = sqrt(n)
    return sp.diags(
        np.sqrt(np.arange(1, n_max + 1)), offsets=1, format="csr", dtype=complex
    )


@functools.lru_cache(maxsize=64)
def mode_operators(cutoffs: FockCutoffs) -> dict:
    """Annihilation and number operators for both modes on the product basis."""
    ia = sp.identity(cutoffs.n_a_max + 1, format="csr", dtype=complex)
    ib = sp.identity(cutoffs.n_b_max + 1, format="csr", dtype=complex)
    a = sp.kron(_destroy(cutoffs.n_a_max), ib, format="csr")
    b = sp.kron(ia, _destroy(cutoffs.n_b_max), format="csr")
    num_a = sp.kron(
        sp.diags(np.arange(cutoffs.n_a_max + 1, dtype=float), format="csr"),
        ib,
        format="csr",
    ).astype(complex)
    num_b = sp.kron(
        ia,
        sp.diags(np.arange(cutoffs.n_b_max + 1, dtype=float), format="csr"),
        format="csr",
    ).astype(complex)
    return {"a": a, "b": b, "num_a": num_a, "num_b": num_b}


@functools.lru_cache(maxsize=64)
def build_hamiltonian(p: SystemParams, cutoffs: FockCutoffs) -> sp.csr_matrix:
    """Hermitian generator of the coherent dynamics.

    H = delta_a n_a + omega_b n_b + g n_a (b + b^dag) + F (a + a^dag),
    in units of the bare mechanical frequency scale.
    """
    ops = mode_operators(cutoffs)
    a, b = ops["a"], ops["b"]
    num_a, num_b = ops["num_a"], ops["num_b"]
    h = (
        p.delta_a * num_a
        + p.omega_b * num_b
        + p.g * (num_a @ (b + b.conjugate().T))
        + p.f * (a + a.conjugate().T)
    )
    return h.tocsr()


@functools.lru_cache(maxsize=64)
def position_damping_term(p: SystemParams, cutoffs: FockCutoffs) -> sp.csr_matrix:
    """Hermitian term i (kappa_b / 4) (b^dag^2 - b^2) damping the mechanical position."""
    b = mode_operators(cutoffs)["b"]
    bdag = b.conjugate().T
    return (1j * p.kappa_b / 4.0) * (bdag @ bdag - b @ b)


@functools.lru_cache(maxsize=64)
def build_effective_hamiltonian(p: SystemParams, cutoffs: FockCutoffs) -> sp.csr_matrix:
    """Non-Hermitian generator of the between-jump evolution.

    H_eff = H + Lambda_b - (i/2)(kappa_a n_a + kappa_b n_b); the anti-Hermitian
    part makes the state norm decay with the total emission probability.
    """
    ops = mode_operators(cutoffs)
    h = build_hamiltonian(p, cutoffs) + position_damping_term(p, cutoffs)
    h_eff = h - 0.5j * (p.kappa_a * ops["num_a"] + p.kappa_b * ops["num_b"])
    return h_eff.tocsr()


@dataclass(frozen=True)
class QuantumState:
    """Pure state on the truncated product basis."""

    amplitudes: np.ndarray
    cutoffs: FockCutoffs

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.cutoffs.dim,):
            raise DimensionMismatchError(
                f"amplitude vector has shape {amps.shape}, expected ({self.cutoffs.dim},)"
            )
        if not np.all(np.isfinite(amps.view(float))):
            raise InvalidParameterError("state amplitudes must be finite")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "QuantumState":
        return QuantumState(self.amplitudes / self.norm, self.cutoffs)


def fock_state(n_a: int, n_b: int, cutoffs: FockCutoffs) -> QuantumState:
    amps = np.zeros(cutoffs.dim, dtype=complex)
    amps[basis_index(n_a, n_b, cutoffs)] = 1.0
    return QuantumState(amps, cutoffs)


def _coherent_column(alpha: complex, n_max: int) -> np.ndarray:
    # log-domain evaluation so large n_max stays finite
    if alpha == 0:
        col = np.zeros(n_max + 1, dtype=complex)
        col[0] = 1.0
        return col
    n = np.arange(n_max + 1)
    log_fact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, n_max + 1)))))
    log_mag = -0.5 * abs(alpha) ** 2 + n * math.log(abs(alpha)) - 0.5 * log_fact
    return np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))


def coherent_state(alpha: complex, beta: complex, cutoffs: FockCutoffs) -> QuantumState:
    """Truncated coherent product state, renormalized to unit norm.

    The truncation tail is discarded; callers should place cutoffs well above
    |alpha|^2 and |beta|^2 so the discarded weight is negligible.
    """
    col_a = _coherent_column(alpha, cutoffs.n_a_max)
    col_b = _coherent_column(beta, cutoffs.n_b_max)
    amps = np.kron(col_a, col_b)
    return QuantumState(amps, cutoffs).normalized()


def expectation(state: QuantumState | np.ndarray, op: sp.spmatrix) -> complex:
    """<psi| O |psi> for a normalized state."""
    psi = state.amplitudes if isinstance(state, QuantumState) else np.asarray(state)
    if op.shape[1] != psi.shape[0]:
        raise DimensionMismatchError(
            f"operator shape {op.shape} incompatible with state length {psi.shape[0]}"
        )
    return complex(np.vdot(psi, op @ psi))
