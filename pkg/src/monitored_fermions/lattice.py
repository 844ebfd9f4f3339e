"""Tight-binding chain: Hamiltonian, single-particle eigenbasis and derived scales."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PERIODIC = "periodic"
OPEN = "open"


@dataclass(frozen=True)
class LatticeConfig:
    L: int
    J: float = 1.0
    bc: str = PERIODIC
    n: float = 0.5

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L!r}")
        if self.bc not in (PERIODIC, OPEN):
            raise ValueError(f"bc must be 'periodic' or 'open', got {self.bc!r}")
        if not 0.0 <= self.n <= 1.0:
            raise ValueError(f"filling n must lie in [0, 1], got {self.n!r}")
        if not np.isfinite(self.J):
            raise ValueError("J must be finite")

    @property
    def n_particles(self) -> int:
        # round half up; python's round() is banker's rounding
        return int(math.floor(self.n * self.L + 0.5))


@dataclass(frozen=True)
class SingleParticleBasis:
    """Eigenmodes of the hopping matrix.

    ``eigenvectors[:, k]`` is the k-th mode. For periodic chains the modes are
    plane waves ordered by momentum index ``m = 0..L-1``; for open chains they
    come from the numerical solver, sorted by energy.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    momentum_index: np.ndarray | None = None

    @property
    def L(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class DerivedScales:
    tau0: float
    l0: float
    v0: float
    Ddiff: float
    g0: float
    ln_lcorr: float
    vmax: float

    @property
    def lcorr(self) -> float:
        """Correlation length; ``inf`` when it overflows a double."""
        return math.exp(self.ln_lcorr) if self.ln_lcorr < 700 else math.inf

    def as_dict(self) -> dict:
        return {
            "tau0": self.tau0,
            "l0": self.l0,
            "v0": self.v0,
            "D": self.Ddiff,
            "g0": self.g0,
            "ln_lcorr": self.ln_lcorr,
            "vmax": self.vmax,
        }


def build_hamiltonian(config: LatticeConfig) -> np.ndarray:
    L, J = config.L, config.J
    H = np.zeros((L, L))
    idx = np.arange(L - 1)
    H[idx, idx + 1] = -J
    H[idx + 1, idx] = -J
    if config.bc == PERIODIC:
        # accumulate so that L=2 gets both bonds
        H[0, L - 1] += -J
        H[L - 1, 0] += -J
    return H


def plane_wave_basis(config: LatticeConfig) -> SingleParticleBasis:
    if config.bc != PERIODIC:
        raise ValueError("plane waves diagonalize the periodic chain only")
    L = config.L
    m = np.arange(L)
    k = 2 * np.pi * m / L
    V = np.exp(1j * np.outer(np.arange(L), k)) / np.sqrt(L)
    return SingleParticleBasis(-2 * config.J * np.cos(k), V, m)


def diagonalize(config: LatticeConfig, analytic: bool = True) -> SingleParticleBasis:
    """Single-particle eigenbasis; periodic chains use plane waves unless ``analytic=False``."""
    if config.bc == PERIODIC and analytic:
        return plane_wave_basis(config)
    H = build_hamiltonian(config)
    try:
        xi, V = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed for L={config.L}") from exc
    return SingleParticleBasis(xi, V.astype(complex), None)


def propagator_phases(basis: SingleParticleBasis, dt: float) -> np.ndarray:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return np.exp(-1j * basis.eigenvalues * dt)


def derived_scales(gamma: float, config: LatticeConfig) -> DerivedScales:
    if not gamma > 0:
        raise ValueError(f"measurement rate must be positive, got {gamma!r}")
    J, n = config.J, config.n
    tau0 = 1.0 / (2.0 * gamma)
    v0 = math.sqrt(2.0) * abs(J)
    l0 = v0 * tau0
    g0 = 2.0 * l0 * n * (1.0 - n)
    ln_lcorr = math.log(l0) + 4.0 * math.pi * g0
    return DerivedScales(
        tau0=tau0, l0=l0, v0=v0, Ddiff=J * J / gamma, g0=g0, ln_lcorr=ln_lcorr, vmax=2.0 * abs(J)
    )
