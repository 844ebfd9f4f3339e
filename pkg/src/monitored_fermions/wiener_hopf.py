"""Half-line integral equation for the equal-time correlator with the measurement boundary.

In units of ``tau0`` the auxiliary function obeys, for ``t <= 0``,

    F(t) - (1/2) int_{-inf}^0 B(|t - t'|) F(t') dt' = B(-t) / 2,
    B(s) = exp(-s) J0(sqrt(2) u s),

and ``C(q) = 2 n (1 - n) [1 - F(0)]``. The equation is discretized with the
trapezoidal rule on ``t_j = -j h`` (the kernel kink sits on grid nodes, so the
error is even in ``h`` and Richardson extrapolation applies). The symmetrized
system is positive definite and Toeplitz up to the end weights; it is solved
with conjugate gradients and FFT matrix-vector products, or densely for small
grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft
from scipy.linalg import solve
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import j0

from .lattice import LatticeConfig, derived_scales

DENSE_LIMIT = 4000


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class WienerHopfResult:
    C: float           # extrapolated C(q)
    C_coarse: float    # raw value on step h
    C_fine: float      # raw value on step h/2
    u: float
    h: float           # step in units of tau0
    t_max: float       # truncation in units of tau0
    rel_change_h: float
    rel_change_t: float


def kernel(s, u: float):
    s = np.asarray(s, dtype=float)
    return np.exp(-s) * j0(math.sqrt(2.0) * u * s)


def solve_scaled(u: float, h: float, t_max: float, method: str = "auto") -> float:
    """``C / [n(1-n)]`` for one grid; ``method`` is "cg", "dense" or "auto"."""
    n = int(round(t_max / h)) + 1
    k = kernel(np.arange(n) * h, u)
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    sw = np.sqrt(w)
    rhs = sw * 0.5 * k
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "cg"
    if method == "dense":
        idx = np.arange(n)
        K = k[np.abs(idx[:, None] - idx[None, :])]
        A = np.eye(n) - 0.5 * sw[:, None] * K * sw[None, :]
        y = solve(A, rhs, assume_a="pos")
    elif method == "cg":
        m = next_fast_len(2 * n)
        col = np.zeros(m)
        col[:n] = k
        col[m - n + 1:] = k[1:][::-1]
        fk = rfft(col)

        def matvec(x):
            z = np.zeros(m)
            z[:n] = sw * x.ravel()
            return x.ravel() - 0.5 * sw * irfft(fk * rfft(z), m)[:n]

        op = LinearOperator((n, n), matvec=matvec, dtype=float)
        y, info = cg(op, rhs, rtol=1e-13, atol=0.0, maxiter=20 * n)
        if info != 0:
            raise ConvergenceError(f"CG did not converge (info={info}) at u={u}")
    else:
        raise ValueError(f"unknown method {method!r}")
    F0 = y[0] / sw[0]
    return 2.0 * (1.0 - F0)


def default_grid(u: float) -> tuple[float, float]:
    h = min(1.0, 1.0 / (math.sqrt(2.0) * u)) / 40.0
    # bulk decay rate of F is ~u for small u
    t_max = max(40.0, 25.0 / u)
    return h, t_max


def solve_u(u: float, h: float | None = None, t_max: float | None = None,
            tol: float = 2e-3, max_refine: int = 6, method: str = "auto") -> WienerHopfResult:
    """Solve at scaled momentum ``u`` refining ``h`` until halving it moves C by < ``tol``."""
    if u <= 0:
        raise ValueError("u must be positive")
    h0, t0 = default_grid(u)
    h = h0 if h is None else h
    t_max = t0 if t_max is None else t_max
    coarse = solve_scaled(u, h, t_max, method)
    fine, dh = coarse, math.inf
    for _ in range(max_refine):
        fine = solve_scaled(u, h / 2, t_max, method)
        dh = abs(fine / coarse - 1)
        if dh < tol:
            break
        h, coarse = h / 2, fine
    else:
        raise ConvergenceError(f"no convergence in h at u={u} (last change {dh:.2e})")
    longer = solve_scaled(u, h, 2 * t_max, method)
    dt = abs(longer / coarse - 1)
    if dt >= tol:
        raise ConvergenceError(f"no convergence in t_max at u={u} (change {dt:.2e})")
    return WienerHopfResult((4 * fine - coarse) / 3, coarse, fine, u, h, t_max, dh, dt)


def wiener_hopf_solve(q: float, gamma: float, J: float, n: float, **grid) -> WienerHopfResult:
    """Boundary-problem ``C(q)`` (the result's ``C`` includes the ``n(1-n)`` factor).

    ``grid`` accepts ``h`` and ``t_max`` in units of ``tau0`` plus ``tol``.
    """
    if q <= 0:
        raise ValueError("q must be positive")
    l0 = derived_scales(gamma, LatticeConfig(2, J, n=n)).l0
    u = 2 * l0 * math.sin(q / 2)
    res = solve_u(u, **grid)
    f = n * (1 - n)
    return WienerHopfResult(f * res.C, f * res.C_coarse, f * res.C_fine, u, res.h, res.t_max,
                            res.rel_change_h, res.rel_change_t)
