"""Gaussian drivers: fBm sampling, geometric lift, covariance-variation probes.

Sampling is exact in law (circulant embedding, with a dense Cholesky
fallback) and reproducible: the generator is counter-based and keyed by
(seed, path index, component), so Monte-Carlo sweeps are deterministic and
order-independent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import TimeGrid
from .rough import RoughPathGrid, holder_seminorm

log = logging.getLogger(__name__)


def fbm_covariance(s: float, t: float, H: float) -> float:
    """Covariance (t^2H + s^2H - |t-s|^2H) / 2 of fractional Brownian motion."""
    if not 0.0 < H < 1.0:
        raise ValueError(f"Hurst parameter must be in (0,1), got {H}")
    if s < 0 or t < 0:
        raise ValueError("times must be nonnegative")
    return 0.5 * (t ** (2 * H) + s ** (2 * H) - abs(t - s) ** (2 * H))


@dataclass(frozen=True)
class CovarianceGrid:
    """Covariance matrix R(t_i, t_j) sampled at the grid nodes."""

    grid: TimeGrid
    R: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        n = self.grid.M + 1
        if R.shape != (n, n):
            raise ValueError(f"R must be {(n, n)}, got {R.shape}")
        if not np.allclose(R, R.T, atol=1e-12):
            raise ValueError("covariance grid is not symmetric")
        object.__setattr__(self, "R", R)

    def check_psd(self) -> bool:
        """Positive semi-definiteness via Cholesky of a jittered copy."""
        try:
            np.linalg.cholesky(self.R + 1e-12 * np.eye(self.R.shape[0]))
            return True
        except np.linalg.LinAlgError:
            return False


def fbm_covariance_grid(grid: TimeGrid, H: float) -> CovarianceGrid:
    t = grid.nodes
    R = 0.5 * (t[:, None] ** (2 * H) + t[None, :] ** (2 * H)
               - np.abs(t[:, None] - t[None, :]) ** (2 * H))
    return CovarianceGrid(grid, R)


@dataclass(frozen=True)
class FbmSpec:
    H: float
    d: int
    grid: TimeGrid
    seed: int
    sampler: str = "circulant"

    def __post_init__(self):
        if not (1.0 / 3.0 < self.H < 1.0):
            raise ValueError(f"H must be in (1/3, 1), got {self.H}")
        if self.d < 1:
            raise ValueError(f"need d >= 1, got {self.d}")
        if self.sampler not in ("circulant", "cholesky"):
            raise ValueError(f"unknown sampler {self.sampler!r}")


def _component_rng(seed: int, path_index: int, component: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=(seed, path_index, component))))


def _fgn_autocov(M: int, H: float) -> np.ndarray:
    """Autocovariance of unit-spaced fractional Gaussian noise, lags 0..M."""
    k = np.arange(M + 1, dtype=float)
    return 0.5 * ((k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))


def _circulant_eigs(M: int, H: float) -> Optional[np.ndarray]:
    gamma = _fgn_autocov(M, H)
    c = np.concatenate([gamma[:M], gamma[M:M + 1], gamma[M - 1:0:-1]])
    lam = np.fft.fft(c).real
    if np.min(lam) < -1e-9 * np.max(lam):
        return None
    return np.maximum(lam, 0.0)


def _sample_fgn_circulant(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One exact draw of M unit-spaced fGn increments from circulant eigenvalues."""
    twoM = lam.shape[0]
    M = twoM // 2
    z = rng.standard_normal(twoM)
    w = np.empty(twoM, dtype=complex)
    w[0] = z[0] * np.sqrt(twoM)
    w[M] = z[M] * np.sqrt(twoM)
    re = z[1:M]
    im = z[M + 1:]
    w[1:M] = (re + 1j * im) * np.sqrt(twoM / 2.0)
    w[M + 1:] = np.conj(w[M - 1:0:-1])
    out = np.fft.ifft(np.sqrt(lam) * w)
    return out[:M].real


def _sample_fgn_cholesky(chol: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return chol @ rng.standard_normal(chol.shape[0])


def sample_fbm(spec: FbmSpec, path_index: int = 0) -> np.ndarray:
    """Sample one fBm path on the grid; returns array of shape (M+1, d).

    Deterministic given (spec.seed, path_index); components are i.i.d.
    Increments are generated at unit spacing and rescaled by h^H
    (self-similarity), so both samplers realise the exact joint law.
    """
    g = spec.grid
    M = g.M
    sampler = spec.sampler
    lam = chol = None
    if sampler == "circulant":
        lam = _circulant_eigs(M, spec.H)
        if lam is None:
            log.warning("circulant embedding not nonnegative for H=%s, M=%s; "
                        "falling back to Cholesky", spec.H, M)
            sampler = "cholesky"
    if sampler == "cholesky":
        k = np.arange(M + 1, dtype=float)
        R = 0.5 * (k[:, None] ** (2 * spec.H) + k[None, :] ** (2 * spec.H)
                   - np.abs(k[:, None] - k[None, :]) ** (2 * spec.H))[1:, 1:]
        chol = np.linalg.cholesky(R)

    X = np.zeros((M + 1, spec.d))
    scale = g.h ** spec.H
    for c in range(spec.d):
        rng = _component_rng(spec.seed, path_index, c)
        if sampler == "circulant":
            incr = _sample_fgn_circulant(lam, rng)
            X[1:, c] = scale * np.cumsum(incr)
        else:
            X[1:, c] = scale * _sample_fgn_cholesky(chol, rng)
    return X


def sample_fbm_paths(spec: FbmSpec, n_paths: int, first_index: int = 0) -> np.ndarray:
    """Stack of n_paths independent draws, shape (n_paths, M+1, d)."""
    return np.stack([sample_fbm(spec, first_index + k) for k in range(n_paths)])


def lift_geometric(paths: np.ndarray, grid: TimeGrid, beta: float) -> RoughPathGrid:
    """Lift sampled first-level paths with the piecewise-linear second level.

    Per cell XX := (dX (x) dX) / 2, the exact iterated integral of the linear
    interpolant; geometric by construction, and for d = 1 exact for any
    geometric lift.
    """
    X = np.atleast_2d(np.asarray(paths, dtype=float).T).T
    dX = np.diff(X, axis=0)
    XX = 0.5 * dX[:, :, None] * dX[:, None, :]
    return RoughPathGrid(grid, X, XX, beta)


def rect_increment(cov: CovarianceGrid, s: float, t: float, u: float, v: float) -> float:
    """R([s,t] x [u,v]) = R(t,v) - R(t,u) - R(s,v) + R(s,u), nodes of the grid."""
    g = cov.grid
    i, j, k, l = (g.index_of(x) for x in (s, t, u, v))
    R = cov.R
    return float(R[j, l] - R[j, k] - R[i, l] + R[i, k])


@dataclass(frozen=True)
class RVariationEstimate:
    r: float
    value: float
    method: str


def second_order_r_variation(cov: CovarianceGrid, r: float) -> RVariationEstimate:
    """Grid-based lower estimate of the second-order r-variation of R.

    Sums |rectangular increment|^r over all cell pairs of the grid partition
    and of its dyadic coarsenings, keeping the largest value.  The true
    supremum over arbitrary partition pairs is not computed.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    best = 0.0
    R = cov.R
    M = cov.grid.M
    stride = 1
    while M // stride >= 1:
        idx = np.arange(0, M + 1, stride)
        Rs = R[np.ix_(idx, idx)]
        rect = Rs[1:, 1:] - Rs[1:, :-1] - Rs[:-1, 1:] + Rs[:-1, :-1]
        val = float(np.sum(np.abs(rect) ** r) ** (1.0 / r))
        best = max(best, val)
        if M % (2 * stride) != 0:
            break
        stride *= 2
    return RVariationEstimate(r, best, "grid-partition lower bound")


def boundary_on_grid(L, grid: TimeGrid, alpha: Optional[float] = None,
                     beta: Optional[float] = None) -> np.ndarray:
    """Sample a boundary process and sanity-check its declared regularity.

    L may be a callable of time or an array at the nodes.  When alpha is
    given, the grid Hölder seminorm must stay below a loose cap and, if beta
    is given too, alpha must exceed 1/2 v (1 - beta).
    """
    from .grid import path_on_grid
    path = path_on_grid(L, grid)
    if alpha is not None:
        if beta is not None and alpha <= max(0.5, 1.0 - beta):
            raise ValueError(
                f"boundary exponent alpha={alpha} must exceed max(1/2, 1-beta)={max(0.5, 1 - beta)}")
        semi = holder_seminorm(path, alpha, grid)
        scale = max(1.0, float(np.max(np.abs(path))))
        if semi > 1e3 * scale:
            raise ValueError(
                f"boundary path looks rougher than declared alpha={alpha} "
                f"(grid seminorm {semi:.3g})")
    return path
