"""Compiled scalar time-steppers for the stiff penalised integral equation."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def g_profile(z: float) -> float:
    if z >= 0.0:
        return 0.0
    return max(-z - 0.5 + 0.5 * np.exp(2.0 * z), 0.0)


@njit(cache=True)
def gp_profile(z: float) -> float:
    if z >= 0.0:
        return 0.0
    return np.exp(2.0 * z) - 1.0


@njit(cache=True)
def _implicit_cell(target: float, ell1: float, w: float, n: float) -> float:
    """Root of x - target - w * g(n (x - ell1)) = 0.

    g is non-increasing and w >= 0, so F is strictly increasing and the root
    is unique.  Newton from the unpenalised guess with a bisection safeguard.
    """
    x = max(target, ell1)
    lo = target               # F(target) = -w g(...) <= 0
    hi = max(target, ell1) + w * (0.5 + max(0.0, n * (ell1 - target)))  # g <= n y_-
    for _ in range(100):
        z = n * (x - ell1)
        F = x - target - w * g_profile(z)
        if abs(F) < 1e-14 * (1.0 + abs(x)):
            return x
        if F > 0.0:
            hi = min(hi, x)
        else:
            lo = max(lo, x)
        Fp = 1.0 - w * n * gp_profile(z)
        step = F / Fp
        xn = x - step
        if xn < lo or xn > hi:
            xn = 0.5 * (lo + hi)
        x = xn
    return x


@njit(cache=True)
def trapezoid_penalised(f0: float, ell: np.ndarray, dg: np.ndarray,
                        Psi: float, n: float, h: float) -> np.ndarray:
    """Implicit-trapezoid march of f' = dg/dt + Psi * psi_n(f - ell).

    ell has one value per node, dg one forcing increment per cell.  The
    penalty term is treated implicitly (A-stable), which is what makes
    n*h >> 1 tractable.
    """
    m = dg.shape[0]
    f = np.empty(m + 1)
    f[0] = f0
    w = 0.5 * Psi * h
    for j in range(m):
        expl = w * g_profile(n * (f[j] - ell[j]))
        target = f[j] + dg[j] + expl
        f[j + 1] = _implicit_cell(target, ell[j + 1], w, n)
    return f


@njit(cache=True)
def euler_penalised_paths(Y0: np.ndarray, dG: np.ndarray, ell: np.ndarray,
                          h: float, n: float, Psi: float) -> np.ndarray:
    """Implicit-Euler penalised recursion, vectorised over many paths.

    dG is (paths, cells): per-cell forcing increments (noise plus any
    explicit drift).  Returns the full solution array (paths, nodes).
    Used by the Monte-Carlo density sweeps where the forcing is additive.
    """
    P, m = dG.shape
    Y = np.empty((P, m + 1))
    Y[:, 0] = Y0
    w = Psi * h
    for k in range(m):
        for p in range(P):
            Y[p, k + 1] = _implicit_cell(Y[p, k] + dG[p, k], ell[k + 1], w, n)
    return Y
