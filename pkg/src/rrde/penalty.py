"""Smooth penalty family and the noise-free penalised integral equation.

The profile is g(z) = 0 for z >= 0 and g(z) = -z - 1/2 + exp(2z)/2 for
z < 0, glued C^1 at zero; psi_n(y) = g(n y).  It is non-increasing,
sandwiched between (n y_- - 1/2) v 0 and n y_-, and non-decreasing in n.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import TimeGrid, path_on_grid
from . import _stepper


class PenaltyFamilyError(AssertionError):
    """A claimed structural property of the penalty family failed."""


class LemmaCheckError(AssertionError):
    """The explicit-constant a-priori inequality failed on an instance."""


def _g(z):
    z = np.asarray(z, dtype=float)
    zm = np.minimum(z, 0.0)
    # clamp: the profile is >= 0 analytically, but the three-term sum
    # cancels catastrophically for |z| ~ 1e-13
    return np.where(z < 0.0,
                    np.maximum(-zm - 0.5 + 0.5 * np.exp(2.0 * zm), 0.0), 0.0)


def _gp(z):
    z = np.asarray(z, dtype=float)
    zm = np.minimum(z, 0.0)
    return np.where(z < 0.0, np.exp(2.0 * zm) - 1.0, 0.0)


@dataclass(frozen=True)
class PenaltyFamily:
    """psi_n(y) = g(n y) with the exponential-relaxation profile above."""

    def psi(self, n: float, y):
        if n < 1:
            raise ValueError(f"penalty index must be >= 1, got {n}")
        out = _g(n * np.asarray(y, dtype=float))
        return float(out) if out.ndim == 0 else out

    def psi_prime(self, n: float, y):
        if n < 1:
            raise ValueError(f"penalty index must be >= 1, got {n}")
        out = n * _gp(n * np.asarray(y, dtype=float))
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FamilyCheckReport:
    n_list: tuple
    samples: int
    max_sandwich_defect: float
    max_monotonicity_defect: float
    max_derivative_sign: float
    max_fd_error: float


def verify_family(n_list: Sequence[float], y_samples: np.ndarray,
                  fd_rel_tol: float = 1e-6) -> FamilyCheckReport:
    """Check the structural bounds of the family on a sample sweep.

    Verifies, for each n and sampled y: the sandwich
    (n y_- - 1/2) v 0 <= psi_n(y) <= n y_-, psi_n <= psi_{n'} for n <= n',
    psi_n' <= 0, and a finite-difference match of the derivative.  Any
    violation raises PenaltyFamilyError naming the invariant, n and y.
    """
    fam = PenaltyFamily()
    y = np.asarray(y_samples, dtype=float)
    if len(n_list) == 0 or y.size == 0:
        raise ValueError("need non-empty n_list and y_samples")
    ns = sorted(float(n) for n in n_list)
    ym = np.maximum(-y, 0.0)
    tol = 1e-12
    sandwich = mono = sign = fd_err = 0.0
    prev = None
    for n in ns:
        v = fam.psi(n, y)
        lo = np.maximum(n * ym - 0.5, 0.0)
        hi = n * ym
        d_lo = float(np.max(lo - v))
        d_hi = float(np.max(v - hi))
        sandwich = max(sandwich, d_lo, d_hi)
        if d_lo > tol or d_hi > tol:
            i = int(np.argmax(np.maximum(lo - v, v - hi)))
            raise PenaltyFamilyError(
                f"sandwich bound violated at n={n}, y={y[i]}: psi={v[i]}, "
                f"band=[{lo[i]}, {hi[i]}]")
        if prev is not None:
            d = float(np.max(prev - v))
            mono = max(mono, d)
            if d > tol:
                i = int(np.argmax(prev - v))
                raise PenaltyFamilyError(
                    f"monotonicity in n violated between n={prev_n} and n={n} "
                    f"at y={y[i]}")
        dv = fam.psi_prime(n, y)
        s = float(np.max(dv))
        sign = max(sign, s)
        if s > tol:
            i = int(np.argmax(dv))
            raise PenaltyFamilyError(
                f"psi_n' > 0 at n={n}, y={y[i]}: {dv[i]}")
        # FD check away from the C^1 gluing point, where the one-sided
        # curvature jump would pollute a central difference.
        step = 1e-6 / n
        mask = np.abs(n * y) > 20 * n * step
        if np.any(mask):
            yy = y[mask]
            fd = (fam.psi(n, yy + step) - fam.psi(n, yy - step)) / (2 * step)
            ref = fam.psi_prime(n, yy)
            err = np.max(np.abs(fd - ref) / np.maximum(1.0, np.abs(ref)))
            fd_err = max(fd_err, float(err))
            if err > fd_rel_tol:
                i = int(np.argmax(np.abs(fd - ref) / np.maximum(1.0, np.abs(ref))))
                raise PenaltyFamilyError(
                    f"derivative mismatch at n={n}, y={yy[i]}: fd={fd[i]}, "
                    f"analytic={ref[i]}")
        if fam.psi(n, 0.0) != 0.0 or fam.psi_prime(n, 0.0) != 0.0:
            raise PenaltyFamilyError(f"gluing point not clean at n={n}")
        prev, prev_n = v, n
    return FamilyCheckReport(tuple(ns), y.size, sandwich, mono, sign, fd_err)


@dataclass(frozen=True)
class ScalarPenalisedProblem:
    """f_t = f0 + g_t + Psi * int_0^t psi_n(f_u - ell_u) du on the grid."""

    f0: float
    ell: np.ndarray
    gpath: np.ndarray
    Psi: float
    n: float
    grid: TimeGrid

    def __post_init__(self):
        object.__setattr__(self, "ell", path_on_grid(self.ell, self.grid))
        object.__setattr__(self, "gpath", path_on_grid(self.gpath, self.grid))
        if self.Psi <= 0:
            raise ValueError(f"Psi must be positive, got {self.Psi}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if abs(self.gpath[0]) > 1e-14:
            raise ValueError("forcing path must start at 0")
        # f0 >= ell_0 is required by the a-priori certificate but not by the
        # solver itself (pure-relaxation runs legitimately start below).


class SolverError(RuntimeError):
    pass


def solve_scalar_penalised(prob: ScalarPenalisedProblem, tol: float = 1e-8,
                           max_levels: int = 14) -> np.ndarray:
    """Solution path at the grid nodes, refined until two levels agree.

    Each refinement halves the substep inside every grid cell (paths are
    interpolated linearly onto substeps); the stiff penalty term is advanced
    by an implicit trapezoid step.  Stops when consecutive refinements agree
    to tol in sup-norm at the nodes.
    """
    g = prob.grid
    prev = None
    for lev in range(max_levels + 1):
        sub = 1 << lev
        m = g.M * sub
        tt = np.linspace(0.0, g.T, m + 1)
        ell = np.interp(tt, g.nodes, prob.ell)
        gg = np.interp(tt, g.nodes, prob.gpath)
        f = _stepper.trapezoid_penalised(prob.f0, ell, np.diff(gg),
                                         prob.Psi, float(prob.n), g.T / m)
        cur = f[::sub]
        if prev is not None and float(np.max(np.abs(cur - prev))) < tol:
            return cur
        prev = cur
    raise SolverError(
        f"no sub-step convergence to {tol} within {max_levels} refinements "
        f"(n={prob.n}, Psi={prob.Psi}, M={g.M})")


_SQRT26 = np.sqrt(26.0)


@dataclass(frozen=True)
class LemmaCertificate:
    i_margin: float          # min over t of rhs - lhs (>= 0 when the bound holds)
    i_worst_t: float
    ii_value: float          # max_t psi_n(f - ell)
    ii_shape: float          # (Psi^-b + Psi^(1-b)) n^(1-b) * measured seminorm mix
    ii_ratio: float


def lemma_a1_check(f: np.ndarray, prob: ScalarPenalisedProblem,
                   beta: float) -> LemmaCertificate:
    """A-priori estimates for the scalar penalised solution.

    (i) |f_t - f_0 - (ell_t - ell_0)| <= sqrt(26) * sup_{s<=t} |g_s - (ell_s - ell_0)|
        at every node -- explicit constant, hard failure on violation.
    (ii) max_t psi_n(f_t - ell_t) against the shape
        (Psi^-beta + Psi^(1-beta)) n^(1-beta) times measured Hölder data;
        only the ratio is reported (no explicit constant available).
    """
    from .rough import holder_seminorm
    if prob.f0 < prob.ell[0]:
        raise ValueError(
            f"certificate hypothesis needs f0 >= ell_0, got {prob.f0} < {prob.ell[0]}")
    g = prob.grid
    dl = prob.ell - prob.ell[0]
    lhs = np.abs(f - f[0] - dl)
    env = np.maximum.accumulate(np.abs(prob.gpath - dl))
    rhs = _SQRT26 * env
    slack = 1e-9 * max(1.0, float(np.max(np.abs(f))))
    margin = float(np.min(rhs + slack - lhs))
    if margin < 0.0:
        i = int(np.argmin(rhs + slack - lhs))
        raise LemmaCheckError(
            f"explicit-constant bound failed at t={g.nodes[i]:.6g}: "
            f"lhs={lhs[i]:.6g} > sqrt(26)*{env[i]:.6g}")
    fam = PenaltyFamily()
    ii_value = float(np.max(fam.psi(prob.n, f - prob.ell)))
    semi = (holder_seminorm(prob.ell, beta, g)
            + holder_seminorm(prob.gpath, beta, g)
            + 0.5 * prob.Psi * g.T ** (1.0 - beta))
    ii_shape = (prob.Psi ** (-beta) + prob.Psi ** (1.0 - beta)) \
        * prob.n ** (1.0 - beta) * semi
    ratio = ii_value / ii_shape if ii_shape > 0 else 0.0
    worst = int(np.argmax(lhs - rhs))
    return LemmaCertificate(margin, float(g.nodes[worst]), ii_value,
                            ii_shape, ratio)
