"""Brute-force many-body reference in the fixed-N Fock sector (small chains only).

Basis states are bitstrings with ``N`` set bits; site ``x`` is bit ``x``. The
state ``|s>`` means ``c^dag_{x1} ... c^dag_{xN} |0>`` with ``x1 < ... < xN``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .gaussian import FORBIDDEN_P, CorrelationMatrix, ForbiddenOutcomeError, SITE
from .lattice import LatticeConfig, PERIODIC

MAX_DIM = 10_000


@dataclass(frozen=True)
class FockBasis:
    L: int
    N: int
    states: np.ndarray  # integer bitmasks, ascending
    index: dict

    @property
    def dim(self) -> int:
        return self.states.size


@dataclass(frozen=True)
class FockState:
    amplitudes: np.ndarray
    basis: FockBasis


@dataclass(frozen=True)
class ExactHamiltonian:
    basis: FockBasis
    matrix: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray


def fock_basis(L: int, N: int) -> FockBasis:
    from math import comb

    if comb(L, N) > MAX_DIM:
        raise ValueError(f"sector dimension C({L},{N}) exceeds {MAX_DIM}")
    states = np.array(sorted(sum(1 << x for x in occ) for occ in combinations(range(L), N)), dtype=np.int64)
    return FockBasis(L, N, states, {int(s): i for i, s in enumerate(states)})


def _hop(s: int, x: int, y: int):
    """Apply c^dag_x c_y to bitmask ``s``; returns (sign, new mask) or None."""
    if x == y:
        return (1, s) if s >> y & 1 else None
    if not s >> y & 1 or s >> x & 1:
        return None
    lo, hi = min(x, y), max(x, y)
    between = bin(s & ((1 << hi) - 1) & ~((1 << (lo + 1)) - 1)).count("1")
    return (-1 if between & 1 else 1), s ^ (1 << y) ^ (1 << x)


def exact_hamiltonian(config: LatticeConfig, N: int | None = None) -> ExactHamiltonian:
    N = config.n_particles if N is None else N
    basis = fock_basis(config.L, N)
    L, J = config.L, config.J
    bonds = [(x, x + 1) for x in range(L - 1)]
    if config.bc == PERIODIC:
        bonds.append((L - 1, 0))
    H = np.zeros((basis.dim, basis.dim))
    for j, s in enumerate(basis.states):
        s = int(s)
        for x, y in bonds:
            for a, b in ((x, y), (y, x)):
                res = _hop(s, a, b)
                if res is not None:
                    sign, s2 = res
                    H[basis.index[s2], j] += -J * sign
    E, U = np.linalg.eigh(H)
    return ExactHamiltonian(basis, H, E, U)


def slater_state(orbitals: np.ndarray) -> FockState:
    """Fock amplitudes of ``prod_k c^dag(phi_k)|0>`` with ``phi_k = orbitals[:, k]``."""
    L, N = orbitals.shape
    basis = fock_basis(L, N)
    amps = np.empty(basis.dim, dtype=complex)
    for i, s in enumerate(basis.states):
        rows = [x for x in range(L) if int(s) >> x & 1]
        amps[i] = np.linalg.det(orbitals[rows, :]) if N else 1.0
    return FockState(amps, basis)


def product_state(occupations) -> FockState:
    occ = [int(b) for b in occupations]
    basis = fock_basis(len(occ), sum(occ))
    amps = np.zeros(basis.dim, dtype=complex)
    amps[basis.index[sum(1 << x for x, b in enumerate(occ) if b)]] = 1.0
    return FockState(amps, basis)


def exact_evolve(state: FockState, ham: ExactHamiltonian, dt: float) -> FockState:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    U = ham.vectors
    amps = U @ (np.exp(-1j * ham.energies * dt) * (U.conj().T @ state.amplitudes))
    return FockState(amps, state.basis)


def occupation_mask(basis: FockBasis, site: int) -> np.ndarray:
    return (basis.states >> site & 1).astype(bool)


def exact_measure(state: FockState, site: int, u: float) -> tuple[int, FockState, float]:
    """Projective occupation measurement; outcome 1 iff ``u < p1``."""
    mask = occupation_mask(state.basis, site)
    p1 = float(np.sum(np.abs(state.amplitudes[mask]) ** 2))
    outcome = 1 if u < p1 else 0
    p = p1 if outcome else 1.0 - p1
    if p < FORBIDDEN_P:
        raise ForbiddenOutcomeError(f"outcome {outcome} at site {site} has probability {p:.3e}")
    keep = mask if outcome else ~mask
    amps = np.where(keep, state.amplitudes, 0.0) / np.sqrt(p)
    return outcome, FockState(amps, state.basis), p1


def exact_correlation_matrix(state: FockState) -> CorrelationMatrix:
    basis = state.basis
    L = basis.L
    a = state.amplitudes
    g = np.zeros((L, L), dtype=complex)
    for j, s in enumerate(basis.states):
        if a[j] == 0:
            continue
        s = int(s)
        for x in range(L):
            for y in range(L):
                res = _hop(s, x, y)
                if res is not None:
                    sign, s2 = res
                    g[x, y] += np.conj(a[basis.index[s2]]) * a[j] * sign
    return CorrelationMatrix(g, SITE)


def reduced_density_matrix(state: FockState, l: int) -> np.ndarray:
    """Density matrix of the first ``l`` sites, indexed by the occupation bitmask of A."""
    if not 0 <= l <= state.basis.L:
        raise ValueError("l out of range")
    low = (1 << l) - 1
    sa = state.basis.states & low
    sb = state.basis.states >> l
    ub, ib = np.unique(sb, return_inverse=True)
    M = np.zeros((1 << l, ub.size), dtype=complex)
    # operators of A precede those of B in the ordering, so no extra sign
    M[sa, ib] = state.amplitudes
    return M @ M.conj().T


def exact_entanglement_entropy(state: FockState, l: int) -> float:
    w = np.linalg.eigvalsh(reduced_density_matrix(state, l))
    w = w[w > 1e-15]
    return float(-np.sum(w * np.log(w)))
