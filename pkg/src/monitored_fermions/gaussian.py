"""Pure Gaussian states: correlation-matrix dynamics and projective occupation measurements.

Convention: ``g[x, y] = <psi^dag(x) psi(y)>``. A Slater determinant with orbital
matrix ``Phi`` (sites x orbitals) has ``g = conj(Phi) @ Phi.T``.

In the eigenmode basis we store ``gt = V.T @ g @ conj(V)`` so that
``g = conj(V) @ gt @ V.T``. Free evolution is then elementwise phase scaling and
a site-``m`` measurement is a rank-2 update built from the vector ``a = V[m, :]``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg.blas import zgeru

from .lattice import LatticeConfig, SingleParticleBasis

SITE = "site"
EIGENMODE = "eigenmode"

# thresholds shared with the trajectory engine
HERMITICITY_TOL = 1e-10
PURITY_TOL = 1e-9
PROB_CLAMP = 1e-10
PROB_CORRUPT = 1e-8
FORBIDDEN_P = 1e-12
REORTHO_TOL = 1e-12


class StateCorruptionError(RuntimeError):
    """Correlation matrix left the physical domain (probabilities, purity, orthonormality)."""


class ForbiddenOutcomeError(ValueError):
    """Requested an outcome whose Born probability is numerically zero."""


@dataclass(frozen=True)
class CorrelationMatrix:
    g: np.ndarray
    basis_tag: str = SITE

    @property
    def L(self) -> int:
        return self.g.shape[0]


@dataclass(frozen=True)
class MeasurementOutcome:
    site: int
    outcome: int
    born_p1: float
    time: float = 0.0


def _occupied_modes(config: LatticeConfig, basis: SingleParticleBasis) -> np.ndarray:
    N = config.n_particles
    index = basis.momentum_index if basis.momentum_index is not None else np.arange(basis.L)
    # degenerate levels: lowest momentum index first
    order = np.lexsort((index, np.round(basis.eigenvalues, 10)))
    return np.sort(order[:N])


def fermi_sea_orbitals(config: LatticeConfig, basis: SingleParticleBasis) -> np.ndarray:
    """Site-basis orbital matrix (L x N) of the lowest N modes."""
    return basis.eigenvectors[:, _occupied_modes(config, basis)]


def init_fermi_sea(config: LatticeConfig, basis: SingleParticleBasis) -> CorrelationMatrix:
    phi = fermi_sea_orbitals(config, basis)
    return CorrelationMatrix(np.conj(phi) @ phi.T, SITE)


def init_product_state(occupations) -> CorrelationMatrix:
    occ = np.asarray(occupations)
    if occ.ndim != 1 or not np.isin(occ, (0, 1)).all():
        raise ValueError("occupations must be a 1-d vector of 0/1")
    return CorrelationMatrix(np.diag(occ.astype(complex)), SITE)


def to_eigenmode(state: CorrelationMatrix, basis: SingleParticleBasis) -> CorrelationMatrix:
    if state.basis_tag == EIGENMODE:
        return state
    V = basis.eigenvectors
    return CorrelationMatrix(V.T @ state.g @ np.conj(V), EIGENMODE)


def to_site(state: CorrelationMatrix, basis: SingleParticleBasis | None = None) -> CorrelationMatrix:
    if state.basis_tag == SITE:
        return state
    if basis is None:
        raise ValueError("an eigenmode-basis state needs its basis to be converted")
    V = basis.eigenvectors
    return CorrelationMatrix(np.conj(V) @ state.g @ V.T, SITE)


def evolve(state: CorrelationMatrix, basis: SingleParticleBasis, dt: float) -> CorrelationMatrix:
    """Free evolution for time ``dt``; the result is in the eigenmode basis."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    st = to_eigenmode(state, basis)
    p = np.exp(-1j * basis.eigenvalues * dt)
    return CorrelationMatrix(st.g * np.outer(np.conj(p), p), EIGENMODE)


def _site_vector(state: CorrelationMatrix, basis: SingleParticleBasis | None, site: int) -> np.ndarray:
    if state.basis_tag == SITE:
        a = np.zeros(state.L, dtype=complex)
        a[site] = 1.0
        return a
    if basis is None:
        raise ValueError("eigenmode-basis state requires the basis")
    return basis.eigenvectors[site, :].astype(complex)


def _checked_probability(p: complex, site: int) -> float:
    p1 = float(np.real(p))
    if p1 < -PROB_CORRUPT or p1 > 1 + PROB_CORRUPT or not np.isfinite(p1):
        raise StateCorruptionError(f"occupation {p1!r} at site {site} outside [0, 1]")
    return min(max(p1, 0.0), 1.0)


def born_probability(state: CorrelationMatrix, site: int, basis: SingleParticleBasis | None = None) -> float:
    if not 0 <= site < state.L:
        raise IndexError(f"site {site} out of range")
    if state.basis_tag == SITE:
        return _checked_probability(state.g[site, site], site)
    a = _site_vector(state, basis, site)
    return _checked_probability(np.vdot(a, state.g @ a), site)


def apply_measurement(
    state: CorrelationMatrix, site: int, outcome: int, basis: SingleParticleBasis | None = None
) -> CorrelationMatrix:
    """Project onto occupation ``outcome`` at ``site`` (rank-2 update, O(L^2))."""
    if outcome not in (0, 1):
        raise ValueError("outcome must be 0 or 1")
    a = _site_vector(state, basis, site)
    col = state.g @ a
    p1 = _checked_probability(np.vdot(a, col), site)
    g = state.g.copy()
    if outcome == 1:
        if p1 < FORBIDDEN_P:
            raise ForbiddenOutcomeError(f"outcome 1 at site {site} has probability {p1:.3e}")
        g -= np.outer(col, np.conj(col)) / p1
        g += np.outer(a, np.conj(a))
    else:
        if 1.0 - p1 < FORBIDDEN_P:
            raise ForbiddenOutcomeError(f"outcome 0 at site {site} has probability {1 - p1:.3e}")
        w = col - a
        g += np.outer(w, np.conj(w)) / (1.0 - p1)
        g -= np.outer(a, np.conj(a))
    return CorrelationMatrix(g, state.basis_tag)


def sample_measurement(
    state: CorrelationMatrix,
    site: int,
    u: float,
    basis: SingleParticleBasis | None = None,
    time: float = 0.0,
) -> tuple[MeasurementOutcome, CorrelationMatrix]:
    """Born-rule draw with the fixed convention: outcome 1 iff ``u < p1``."""
    p1 = born_probability(state, site, basis)
    outcome = 1 if u < p1 else 0
    return MeasurementOutcome(site, outcome, p1, time), apply_measurement(state, site, outcome, basis)


def rehermitize(state: CorrelationMatrix) -> CorrelationMatrix:
    return replace(state, g=0.5 * (state.g + state.g.conj().T))


def hermiticity_error(g: np.ndarray) -> float:
    return float(np.max(np.abs(g - g.conj().T)))


def purity_error(g: np.ndarray) -> float:
    return float(np.max(np.abs(g @ g - g)))


class SlaterState:
    """Slater determinant stored as orbitals in the interaction picture.

    ``W`` holds eigenmode coefficients of the N orbitals with the free phases
    removed, ``Phi(t) = V @ (exp(-i xi t)[:, None] * W)``. Free evolution only
    advances ``t``; a measurement costs O(L N).
    """

    def __init__(self, basis: SingleParticleBasis, orbitals_site: np.ndarray, t: float = 0.0):
        self.basis = basis
        self._V = np.ascontiguousarray(basis.eigenvectors)
        self._xi = basis.eigenvalues
        W = np.conj(self._V).T @ orbitals_site * np.exp(1j * self._xi * t)[:, None]
        self.W = np.asfortranarray(W.astype(complex))
        self.t = float(t)

    @classmethod
    def fermi_sea(cls, config: LatticeConfig, basis: SingleParticleBasis) -> SlaterState:
        return cls(basis, fermi_sea_orbitals(config, basis))

    @classmethod
    def product(cls, basis: SingleParticleBasis, occupations) -> SlaterState:
        occ = np.asarray(occupations)
        if occ.ndim != 1 or not np.isin(occ, (0, 1)).all():
            raise ValueError("occupations must be a 1-d vector of 0/1")
        return cls(basis, np.eye(occ.size)[:, occ.astype(bool)])

    @property
    def L(self) -> int:
        return self.W.shape[0]

    @property
    def N(self) -> int:
        return self.W.shape[1]

    def advance(self, t: float) -> None:
        if t < self.t:
            raise ValueError("time must not decrease")
        self.t = float(t)

    def _row_vector(self, site: int) -> np.ndarray:
        return self._V[site, :] * np.exp(-1j * self._xi * self.t)

    def born_probability(self, site: int) -> float:
        r = self._row_vector(site) @ self.W
        return _checked_probability(np.vdot(r, r), site)

    def measure(self, site: int, u: float) -> MeasurementOutcome:
        a = self._row_vector(site)
        r = a @ self.W
        p1 = _checked_probability(np.vdot(r, r), site)
        outcome = 1 if u < p1 else 0
        if self.N == 0 or p1 == 0.0 and outcome == 0:
            return MeasurementOutcome(site, outcome, p1, self.t)
        if outcome == 0 and 1.0 - p1 < FORBIDDEN_P:
            raise ForbiddenOutcomeError(f"outcome 0 at site {site} has probability {1 - p1:.3e}")
        # Householder reflection concentrating the site amplitude on orbital 0
        x = np.conj(r)
        norm = np.sqrt(p1)
        phase = x[0] / abs(x[0]) if abs(x[0]) > 0 else 1.0
        v = x.copy()
        v[0] += phase * norm
        vv = np.vdot(v, v).real
        if vv > 0:
            Wv = self.W @ v
            # in-place rank-1 update W -= (2/vv) Wv v^dag
            self.W = zgeru(-2.0 / vv, Wv, np.conj(v), a=self.W, overwrite_a=True)
        alpha = -np.conj(phase) * norm
        if outcome == 1:
            self.W[:, 0] = np.conj(a)
        else:
            self.W[:, 0] = (self.W[:, 0] - alpha * np.conj(a)) / np.sqrt(1.0 - p1)
        return MeasurementOutcome(site, outcome, p1, self.t)

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.W.conj().T @ self.W - np.eye(self.N)))) if self.N else 0.0

    def stabilize(self) -> float:
        """Check orthonormality; re-orthonormalize once drift is visible, raise past the purity tolerance."""
        err = self.orthonormality_error()
        if err > PURITY_TOL:
            raise StateCorruptionError(f"orbital orthonormality violated: {err:.3e}")
        if err > REORTHO_TOL:
            self.reorthonormalize()
        return err

    def reorthonormalize(self) -> None:
        if self.N:
            q, rr = np.linalg.qr(self.W)
            # keep column phases so the state (and orbital labels) are unchanged up to gauge
            d = np.diag(rr)
            q = q * (d / np.abs(d))[None, :]
            self.W = np.asfortranarray(q)

    def orbitals(self) -> np.ndarray:
        return self._V @ (np.exp(-1j * self._xi * self.t)[:, None] * self.W)

    def correlation_matrix(self) -> CorrelationMatrix:
        phi = self.orbitals()
        return CorrelationMatrix(np.conj(phi) @ phi.T, SITE)

    def density(self) -> np.ndarray:
        phi = self.orbitals()
        return np.sum(np.abs(phi) ** 2, axis=1)

    def copy(self) -> SlaterState:
        new = object.__new__(SlaterState)
        new.basis, new._V, new._xi = self.basis, self._V, self._xi
        new.W = self.W.copy(order="F")
        new.t = self.t
        return new


class CorrelationTrajectoryState:
    """Correlation matrix kept in the eigenmode basis along a trajectory (O(L^2) per event)."""

    def __init__(self, basis: SingleParticleBasis, state: CorrelationMatrix, t: float = 0.0):
        self.basis = basis
        self.state = to_eigenmode(state, basis)
        self.t = float(t)

    @classmethod
    def fermi_sea(cls, config: LatticeConfig, basis: SingleParticleBasis) -> CorrelationTrajectoryState:
        return cls(basis, init_fermi_sea(config, basis))

    @classmethod
    def product(cls, basis: SingleParticleBasis, occupations) -> CorrelationTrajectoryState:
        return cls(basis, init_product_state(occupations))

    def advance(self, t: float) -> None:
        if t < self.t:
            raise ValueError("time must not decrease")
        if t > self.t:
            self.state = evolve(self.state, self.basis, t - self.t)
            self.t = float(t)

    def born_probability(self, site: int) -> float:
        return born_probability(self.state, site, self.basis)

    def measure(self, site: int, u: float) -> MeasurementOutcome:
        outcome, self.state = sample_measurement(self.state, site, u, self.basis, self.t)
        return outcome

    def correlation_matrix(self) -> CorrelationMatrix:
        return to_site(self.state, self.basis)

    def density(self) -> np.ndarray:
        return np.real(np.diag(self.correlation_matrix().g)).copy()

    def stabilize(self) -> float:
        """Re-Hermitize and return the purity error, raising when it is out of bounds."""
        self.state = rehermitize(self.state)
        err = purity_error(self.state.g)
        if err > PURITY_TOL:
            raise StateCorruptionError(f"purity violated: |g^2 - g| = {err:.3e}")
        return err

    def copy(self) -> CorrelationTrajectoryState:
        new = object.__new__(CorrelationTrajectoryState)
        new.basis, new.state, new.t = self.basis, self.state, self.t
        return new
