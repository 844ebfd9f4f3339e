"""Analytic predictions: diffuson block, Gaussian scaling functions and one-loop RG.

All scaling functions are dimensionless. ``u`` is the rescaled momentum
``2 l0 sin(q/2)`` and ``y`` a length in units of ``l0``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .lattice import DerivedScales, LatticeConfig, derived_scales

# weak-localization slopes of delta C(q)/q against ln(1/q): one-loop value and the larger observed one
WL_SLOPE_ONE_LOOP = -1.0 / (4 * math.pi)
WL_SLOPE_REPORTED = -1.0 / (2 * math.pi)


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class TheoryCurve:
    abscissae: np.ndarray
    values: np.ndarray
    quad_error: np.ndarray
    name: str = ""


@dataclass(frozen=True)
class RGPrediction:
    g_of_q: np.ndarray | None
    z_of_q: np.ndarray | None
    c_of_q: np.ndarray | None
    cumulant_of_l: np.ndarray | None
    q_valid: np.ndarray | None
    l_valid: np.ndarray | None


@dataclass(frozen=True)
class EntropyPrediction:
    value: float
    low: float
    high: float
    regime: str  # "ballistic" | "logarithmic" | "saturated"


def _quad(f, a, b, **kw):
    kw.setdefault("limit", 400)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, err = quad(f, a, b, **kw)[:2]
    return val, err


# ---------------------------------------------------------------- blocks

def diffuson_block(q, omega, tau0: float, J: float):
    """Elementary ladder block ``B(q, omega)``; the square root has positive real part."""
    binv = np.sqrt((1.0 / tau0 - 1j * np.asarray(omega)) ** 2 + (4 * J * np.sin(np.asarray(q) / 2)) ** 2 + 0j)
    return 1.0 / binv


def ladder_block_dimensionless(v, u):
    return 1.0 / np.sqrt((1 - 1j * np.asarray(v)) ** 2 + 2 * np.asarray(u) ** 2 + 0j)


# ---------------------------------------------------------------- c~(u)

def _ctilde_integrand(v: float, u: float) -> float:
    b = ladder_block_dimensionless(v, 2 * u)
    rb = b.real
    return (rb - (b.real ** 2 + b.imag ** 2)) / (1 - rb)


@lru_cache(maxsize=200_000)
def _one_minus_ctilde(u: float) -> tuple[float, float]:
    # 1 - c~ = (2/pi) int_0^inf [1/(1+v^2) - integrand]; the integrand has a
    # smoothed inverse-square-root peak at v = sqrt(8) u
    s = math.sqrt(8.0) * u
    f = lambda v: 1.0 / (1.0 + v * v) - _ctilde_integrand(v, u)
    edges = sorted({0.0, 1.0, max(s - 5.0, 0.5), s, s + 5.0, max(10 * s, 100.0)})
    total = err = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            r, e = _quad(f, lo, hi, epsabs=1e-15, epsrel=1e-12)
            total, err = total + r, err + e
    r, e = _quad(f, edges[-1], np.inf, epsabs=1e-15, epsrel=1e-12)
    return 2 / math.pi * (total + r), 2 / math.pi * (err + e)


def one_minus_ctilde(u: float) -> float:
    if u <= 0:
        raise ValueError("u must be positive")
    return _one_minus_ctilde(float(u))[0]


def bulk_scaling_ctilde(u: float, with_error: bool = False):
    """Universal momentum-space scaling function ``c~(u)``."""
    if u <= 0:
        raise ValueError("u must be positive")
    val, err = _one_minus_ctilde(float(u))
    c = 1.0 - val
    if err > max(1e-6 * abs(c), 1e-12):
        raise QuadratureError(f"c~({u}) quadrature error {err:.2e}")
    return (c, err) if with_error else c


def gaussian_Cq(q, gamma: float, J: float, n: float, lattice: bool = True):
    """Gaussian-level equal-time correlator ``n(1-n) c~(u)``."""
    l0 = derived_scales(gamma, LatticeConfig(2, J, n=n)).l0
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any(q <= 0):
        raise ValueError("q must be positive")
    u = 2 * l0 * np.sin(q / 2) if lattice else q * l0
    out = n * (1 - n) * np.array([bulk_scaling_ctilde(x) for x in u])
    return out if out.size > 1 else float(out[0])


# ---------------------------------------------------------------- c(y), c2(y)

def realspace_c(y: float, with_error: bool = False):
    """Real-space tail scaling function ``c(y) = (1/pi) int_0^inf [1 - c~(u)] cos(u y) du``."""
    if y <= 0:
        raise ValueError("y must be positive")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        # c~(0) = 0 exactly; the integrator may probe the endpoint
        f = lambda u: _one_minus_ctilde(u)[0] if u > 0 else 1.0
        val, err = quad(f, 0, np.inf, weight="cos", wvar=y, limlst=200)[:2]
    val, err = val / math.pi, err / math.pi
    if err > 1e-4 * abs(val):
        raise QuadratureError(f"c({y}) quadrature error {err:.2e}")
    return (val, err) if with_error else val


def cumulant_scaling_c2(y: float, with_error: bool = False):
    """Second-cumulant scaling function ``c2(y) = (2/pi) int du c~(u)(1 - cos u y)/u^2``."""
    if y <= 0:
        raise ValueError("y must be positive")
    ct = lambda u: 1.0 - _one_minus_ctilde(u)[0]
    cut = 50.0 / y if y > 1 else 50.0
    n_seg = max(int(math.ceil(cut * y / math.pi)), 1)
    edges = np.linspace(0.0, cut, n_seg + 1)
    body = lambda u: ct(u) / (u * u) * (1 - math.cos(u * y)) if u > 0 else 0.0
    total = err = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        r, e = _quad(body, lo, hi, epsabs=1e-14, epsrel=1e-12)
        total, err = total + r, err + e
    r, e = _quad(lambda u: ct(u) / (u * u), cut, np.inf, epsabs=1e-14, epsrel=1e-12)
    total, err = total + r, err + e
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        r, e = quad(lambda u: ct(u) / (u * u), cut, np.inf, weight="cos", wvar=y, limlst=200)[:2]
    total, err = total - r, err + e
    val, err = 2 / math.pi * total, 2 / math.pi * err
    if err > 1e-5 * abs(val):
        raise QuadratureError(f"c2({y}) quadrature error {err:.2e}")
    return (val, err) if with_error else val


def tabulate(name: str, xs) -> TheoryCurve:
    fns = {"ctilde": bulk_scaling_ctilde, "c": realspace_c, "c2": cumulant_scaling_c2}
    if name not in fns:
        raise ValueError(f"unknown curve {name!r}; choose from {sorted(fns)}")
    xs = np.sort(np.asarray(xs, dtype=float))
    vals, errs = zip(*(fns[name](x, with_error=True) for x in xs)) if xs.size else ((), ())
    return TheoryCurve(xs, np.array(vals), np.array(errs), name)


def realspace_correlator(x, gamma: float, J: float, n: float):
    """``C(x) = n(1-n)[delta_{x,0} - c(|x|/l0)/l0]`` on integer separations."""
    l0 = derived_scales(gamma, LatticeConfig(2, J, n=n)).l0
    x = np.atleast_1d(np.asarray(x))
    out = np.empty(x.shape)
    for i, xi in enumerate(x):
        out[i] = 1.0 if xi == 0 else -realspace_c(abs(xi) / l0) / l0
    return n * (1 - n) * out


# ---------------------------------------------------------------- RG and diffusion

def _scales(gamma, J, n) -> DerivedScales:
    return derived_scales(gamma, LatticeConfig(2, J, n=n))


def rg_corrected(gamma: float, J: float, n: float, q=None, l=None) -> RGPrediction:
    """One-loop running coupling ``g(q) = g0 - ln(1/(q l0))/(4 pi)`` with ``Z = 1``."""
    sc = _scales(gamma, J, n)
    g = z = cq = cl = qv = lv = None
    if q is not None:
        q = np.abs(np.atleast_1d(np.asarray(q, dtype=float)))
        log = np.log(1.0 / (q * sc.l0))
        g = sc.g0 - log / (4 * math.pi)
        z = np.ones_like(g)
        cq = z ** 2 * g * q
        qv = (log > 0) & (log < sc.ln_lcorr - math.log(sc.l0)) & (g >= 1.0)
    if l is not None:
        l = np.atleast_1d(np.asarray(l, dtype=float))
        log = np.log(l / sc.l0)
        cl = 2 * sc.g0 / math.pi * log - log ** 2 / (4 * math.pi)
        g_at_l = sc.g0 - log / (4 * math.pi)
        lv = (log > 0) & (np.log(l) < sc.ln_lcorr) & (g_at_l >= 1.0)
    return RGPrediction(g, z, cq, cl, qv, lv)


def diffusive_C0(x, t, D: float, n: float):
    t = np.asarray(t, dtype=float)
    if np.any(t == 0):
        raise ValueError("t must be nonzero")
    at = np.abs(t)
    return n * (1 - n) * np.exp(-np.asarray(x) ** 2 / (4 * D * at)) / np.sqrt(4 * math.pi * D * at)


def entropy_prediction(l: float, gamma: float, J: float, n: float) -> EntropyPrediction:
    """Piecewise entanglement-entropy prediction with its regime tag."""
    sc = _scales(gamma, J, n)
    if n in (0.0, 1.0):
        return EntropyPrediction(0.0, 0.0, 0.0, "ballistic")
    if l <= sc.l0:
        s = -(n * math.log(n) + (1 - n) * math.log(1 - n)) * l
        return EntropyPrediction(s, s, s, "ballistic")
    if math.log(l) < sc.ln_lcorr:
        s = 4 * math.pi / 3 * n * (1 - n) * sc.l0 * math.log(l / sc.l0)
        return EntropyPrediction(s, s, s, "logarithmic")
    g2 = sc.g0 ** 2
    return EntropyPrediction(g2, g2 / 10, 10 * g2, "saturated")
