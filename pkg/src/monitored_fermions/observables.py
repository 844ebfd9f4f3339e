"""Observables of a Gaussian state: pair correlator, particle-number statistics, entropy."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import zeta

from .gaussian import CorrelationMatrix, SITE

EIG_TOL = 1e-8
LOG_CLAMP = 1e-14
IMAG_TOL = 1e-10
MAX_CUMULANT_ORDER = 12


class ObservableError(RuntimeError):
    pass


@dataclass(frozen=True)
class PairCorrelation:
    c_real: np.ndarray
    c_momentum: np.ndarray
    q: np.ndarray
    q_tilde: np.ndarray


@dataclass(frozen=True)
class CumulantProfile:
    lengths: np.ndarray
    l_tilde: np.ndarray
    c2: np.ndarray
    entropy: np.ndarray | None = None
    higher: np.ndarray | None = None  # shape (len(lengths), n_orders), columns C^(2), C^(4), ...
    eigenvalues: list | None = None


def _site_matrix(state) -> np.ndarray:
    if isinstance(state, CorrelationMatrix):
        if state.basis_tag != SITE:
            raise ValueError("observables need a site-basis correlation matrix")
        return state.g
    return np.asarray(state)


def momenta(L: int) -> tuple[np.ndarray, np.ndarray]:
    q = 2 * np.pi * np.arange(L) / L
    return q, 2 * np.sin(q / 2)


def rescaled_length(l, L: int):
    return (L / np.pi) * np.sin(np.pi * np.asarray(l) / L)


def pair_correlation_matrix(state) -> np.ndarray:
    g = _site_matrix(state)
    C = -np.abs(g) ** 2
    C[np.diag_indices_from(C)] += np.real(np.diag(g))
    return C


def translation_average(C: np.ndarray) -> np.ndarray:
    """Mean of ``C[x, (x + r) mod L]`` over ``x`` for each ``r``."""
    L = C.shape[0]
    x = np.arange(L)
    cols = (x[:, None] + x[None, :]) % L
    return C[x[:, None], cols].mean(axis=0)


def pair_correlator(state) -> PairCorrelation:
    C = pair_correlation_matrix(state)
    L = C.shape[0]
    cr = translation_average(C)
    cq = np.fft.fft(cr)
    if np.max(np.abs(cq.imag)) > IMAG_TOL * max(1.0, np.max(np.abs(cq.real))):
        raise ObservableError("momentum-space correlator has an imaginary part; Hermiticity broken")
    q, qt = momenta(L)
    return PairCorrelation(cr, cq.real, q, qt)


def block_eigenvalues(state, l: int) -> np.ndarray:
    g = _site_matrix(state)
    lam = np.linalg.eigvalsh(g[:l, :l])
    if lam.size and (lam.min() < -EIG_TOL or lam.max() > 1 + EIG_TOL):
        raise ObservableError(f"block spectrum outside [0, 1]: [{lam.min()}, {lam.max()}]")
    return lam


def second_cumulant(state, l: int, check: bool = False) -> float:
    g = _site_matrix(state)
    if not 1 <= l <= g.shape[0]:
        raise ValueError("l out of range")
    gA = g[:l, :l]
    val = float(np.real(np.trace(gA) - np.sum(np.abs(gA) ** 2)))
    if check:
        alt = float(np.sum(pair_correlation_matrix(g)[:l, :l]))
        if abs(alt - val) > 1e-10 * max(1.0, abs(val)):
            raise ObservableError(f"cumulant paths disagree: {val} vs {alt}")
    return val


def second_cumulant_all(state) -> np.ndarray:
    """``C^(2)`` of the leading block for every ``l = 1..L`` via 2-d prefix sums."""
    C = pair_correlation_matrix(state)
    S = C.cumsum(axis=0).cumsum(axis=1)
    return np.diag(S).copy()


def _binary_entropy(lam: np.ndarray) -> np.ndarray:
    lam = np.clip(lam, LOG_CLAMP, 1 - LOG_CLAMP)
    return -(lam * np.log(lam) + (1 - lam) * np.log1p(-lam))


def entropy_from_eigenvalues(lam) -> float:
    lam = np.asarray(lam, dtype=float)
    if lam.size and (lam.min() < -EIG_TOL or lam.max() > 1 + EIG_TOL):
        raise ObservableError("eigenvalue outside [0, 1]")
    return float(np.sum(_binary_entropy(lam)))


def entanglement_entropy(state, l: int) -> float:
    return entropy_from_eigenvalues(block_eigenvalues(state, l))


@lru_cache(maxsize=None)
def bernoulli_cumulant_polys(max_order: int) -> tuple:
    """Coefficient arrays of the Bernoulli(lambda) cumulants kappa_1..kappa_max.

    Uses ``kappa_{k+1} = lambda (1 - lambda) d kappa_k / d lambda``.
    """
    polys = [np.array([0.0, 1.0])]
    w = np.array([0.0, 1.0, -1.0])
    for _ in range(max_order - 1):
        polys.append(P.polymul(w, P.polyder(polys[-1])))
    return tuple(polys)


def fcs_cumulants_from_eigenvalues(lam, max_order: int = 2) -> np.ndarray:
    """Even cumulants ``[C^(2), C^(4), ..., C^(max_order)]`` of the subsystem particle number."""
    if max_order % 2 or max_order < 2:
        raise ValueError("max_order must be even and >= 2")
    if max_order > MAX_CUMULANT_ORDER:
        raise ValueError(f"cumulants beyond order {MAX_CUMULANT_ORDER} are not supported")
    lam = np.asarray(lam, dtype=float)
    polys = bernoulli_cumulant_polys(max_order)
    return np.array([np.sum(P.polyval(lam, polys[k - 1])) for k in range(2, max_order + 1, 2)])


def fcs_cumulants(state, l: int, max_order: int = 2) -> np.ndarray:
    return fcs_cumulants_from_eigenvalues(block_eigenvalues(state, l), max_order)


def klich_levitov_entropy(cumulants) -> np.ndarray:
    """Partial sums of ``sum_q 2 zeta(2q) C^(2q)`` for each truncation order."""
    c = np.asarray(cumulants, dtype=float)
    coeff = 2 * zeta(2 * np.arange(1, c.shape[-1] + 1))
    return np.cumsum(coeff * c, axis=-1)


def density_profile(state) -> np.ndarray:
    return np.real(np.diag(_site_matrix(state))).copy()


def default_lengths(L: int) -> np.ndarray:
    if L <= 512:
        return np.arange(1, L // 2 + 1)
    small = np.arange(1, 33)
    big = np.unique(np.round(np.geomspace(33, L // 2, 64)).astype(int))
    return np.union1d(small, big)


def cumulant_profile(state, lengths=None, spectra: bool = True, max_order: int = 2,
                     keep_eigenvalues: bool = False) -> CumulantProfile:
    g = _site_matrix(state)
    L = g.shape[0]
    ls = default_lengths(L) if lengths is None else np.asarray(lengths, dtype=int)
    c2 = second_cumulant_all(g)[ls - 1]
    entropy = higher = eigs = None
    if spectra:
        entropy = np.empty(ls.size)
        higher = np.empty((ls.size, max_order // 2))
        eigs = [] if keep_eigenvalues else None
        for i, l in enumerate(ls):
            lam = block_eigenvalues(g, l)
            entropy[i] = entropy_from_eigenvalues(lam)
            higher[i] = fcs_cumulants_from_eigenvalues(lam, max_order)
            if keep_eigenvalues:
                eigs.append(lam)
    return CumulantProfile(ls, rescaled_length(ls, L), c2, entropy, higher, eigs)
