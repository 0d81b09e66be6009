"""Convergence, rate, Malliavin-derivative and density studies, with
reproducible CSV/SVG/JSON outputs.

Every sweep is deterministic under a fixed seed: the noise generator is
keyed by (seed, path index, component) and all reductions run in path-index
order, so parallel and serial execution give identical results.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import beta as beta_fn

from . import __about__
from .grid import TimeGrid, path_on_grid
from .noise import FbmSpec, sample_fbm, lift_geometric, _component_rng
from .penalty import PenaltyFamily
from .rough import RoughPathGrid
from .skorokhod import (SPCertificate, reflected_solve_additive,
                        reflected_solve_limit, skorokhod_map, verify_sp)
from .solver import (VectorField, constant_sigma, tanh_sigma,
                     solve_penalised_family, _implicit_psi_step)

_FAM = PenaltyFamily()


# ---------------------------------------------------------------------------
# configuration


def _build_sigma(spec: dict, bspec: dict) -> VectorField:
    b = db = None
    name = bspec.get("name", "zero")
    if name == "zero":
        pass
    elif name == "linear":
        c = float(bspec["c"])
        b = lambda y: c * np.asarray(y, dtype=float)
        db = lambda y: np.full_like(np.asarray(y, dtype=float), c)
    elif name == "tanh":
        c = float(bspec["c"])
        b = lambda y: c * np.tanh(np.asarray(y, dtype=float))
        db = lambda y: c / np.cosh(np.asarray(y, dtype=float)) ** 2
    else:
        raise ValueError(f"unknown drift spec {name!r}")
    sname = spec.get("name", "constant")
    if sname == "constant":
        return constant_sigma(spec.get("c", [1.0]), b=b, db=db)
    if sname == "tanh":
        return tanh_sigma(float(spec.get("c0", 1.0)), float(spec.get("c1", 0.5)),
                          b=b, db=db)
    raise ValueError(f"unknown sigma spec {sname!r}")


def _build_boundary(spec: dict) -> Callable[[float], float]:
    name = spec.get("name", "constant")
    if name == "constant":
        v = float(spec.get("value", 0.0))
        return lambda t: v
    if name == "sine":
        amp = float(spec.get("amp", 0.1))
        freq = float(spec.get("freq", 5.0))
        return lambda t: amp * math.sin(freq * t)
    raise ValueError(f"unknown boundary spec {name!r}")


@dataclass
class ExperimentConfig:
    H: float = 0.5
    d: int = 1
    M: int = 4096
    T: float = 1.0
    seed: int = 7
    sigma: dict = field(default_factory=lambda: {"name": "constant", "c": [1.0]})
    drift: dict = field(default_factory=lambda: {"name": "zero"})
    boundary: dict = field(default_factory=lambda: {"name": "constant", "value": 0.0})
    y0: float = 0.0
    beta: Optional[float] = None       # defaults to H - 0.01
    alpha: float = 0.99                # declared boundary Hölder exponent
    n_list: tuple = (4, 8, 16, 32, 64, 128, 256, 512, 1024)
    mc_paths: int = 10_000
    outdir: str = "out"

    def __post_init__(self):
        if self.beta is None:
            self.beta = self.H - 0.01
        if not (1.0 / 3.0 < self.beta < 1.0):
            raise ValueError(f"beta={self.beta} outside (1/3, 1)")
        if self.alpha <= max(0.5, 1.0 - self.beta):
            raise ValueError(
                f"boundary exponent alpha={self.alpha} must exceed "
                f"max(1/2, 1-beta)={max(0.5, 1.0 - self.beta)}")
        L0 = _build_boundary(self.boundary)(0.0)
        if self.y0 < L0:
            raise ValueError(f"y0={self.y0} below the initial boundary {L0}")
        self.n_list = tuple(int(n) for n in self.n_list)
        if sorted(self.n_list) != list(self.n_list):
            raise ValueError("n_list must be increasing")

    # -- plumbing ----------------------------------------------------------
    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.M)

    def vector_field(self) -> VectorField:
        return _build_sigma(self.sigma, self.drift)

    def boundary_path(self, grid: Optional[TimeGrid] = None) -> np.ndarray:
        return path_on_grid(_build_boundary(self.boundary), grid or self.grid)

    def driver(self, path_index: int = 0) -> RoughPathGrid:
        spec = FbmSpec(self.H, self.d, self.grid, self.seed)
        return lift_geometric(sample_fbm(spec, path_index), self.grid, self.beta)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls(**json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# rate study


@dataclass
class RateReport:
    H: float
    beta: float
    n_list: tuple
    sup_err: tuple            # e(n) = sup_t (Y_ref - Y^n)
    neg_part: tuple           # sup_t (Y^n - L)_-
    slope_err: float
    slope_neg: float
    nonneg_ok: bool
    monotone_ok: bool
    provenance: str
    certificate: Optional[SPCertificate]
    passed: bool = field(init=False)

    def __post_init__(self):
        band = -self.beta + 0.15
        self.passed = (self.slope_err <= band and self.slope_neg <= band
                       and self.nonneg_ok and self.monotone_ok)

    def rows(self):
        out = []
        for i, n in enumerate(self.n_list):
            if i >= 1:
                s = np.polyfit(np.log(self.n_list[:i + 1]),
                               np.log(np.maximum(self.sup_err[:i + 1], 1e-300)), 1)[0]
            else:
                s = float("nan")
            out.append((n, self.sup_err[i], self.neg_part[i], s))
        return out


def _fit_slope(n_list, vals):
    vals = np.maximum(np.asarray(vals, dtype=float), 1e-300)
    return float(np.polyfit(np.log(np.asarray(n_list, dtype=float)),
                            np.log(vals), 1)[0])


def run_rate(cfg: ExperimentConfig) -> RateReport:
    """Error of the penalised solutions against a reflected reference on a
    single frozen driver path, with fitted decay exponents in n.

    With constant sigma the reference is the explicit reflection map of the
    frozen free path (exact at grid scale); otherwise the extrapolated
    penalised limit at 4 * max(n) is used and labelled lower-confidence.
    """
    vf = cfg.vector_field()
    rp = cfg.driver()
    g = cfg.grid
    Lp = cfg.boundary_path()
    sig_const = cfg.sigma.get("name") == "constant" and cfg.drift.get("name") == "zero"
    if sig_const:
        c = np.atleast_1d(np.asarray(cfg.sigma.get("c", [1.0]), dtype=float))
        ref = reflected_solve_additive(c, None, rp.X, Lp, cfg.y0, g)
        provenance = "additive-oracle"
        cert = verify_sp(ref.Y, ref.K, Lp, vf, rp, cfg.y0)
    else:
        ref = reflected_solve_limit(vf, rp, Lp, cfg.y0, 4 * max(cfg.n_list))
        provenance = "extrapolated-limit (lower confidence)"
        cert = ref.certificate
    Yn, _ = solve_penalised_family(vf, cfg.n_list, rp, Lp, cfg.y0)
    gaps = ref.Y[None, :] - Yn
    sup_err = np.max(gaps, axis=1)
    neg = np.max(np.maximum(Lp[None, :] - Yn, 0.0), axis=1)
    nonneg_ok = bool(np.min(gaps) >= -1e-12)
    monotone_ok = bool(np.all(np.diff(sup_err) <= 1e-12))
    return RateReport(cfg.H, cfg.beta, cfg.n_list,
                      tuple(map(float, sup_err)), tuple(map(float, neg)),
                      _fit_slope(cfg.n_list, sup_err),
                      _fit_slope(cfg.n_list, neg),
                      nonneg_ok, monotone_ok, provenance, cert)


# ---------------------------------------------------------------------------
# monotone convergence


@dataclass(frozen=True)
class MonotoneReport:
    n_list: tuple
    max_order_defect: float       # worst of sup_t (Y^n - Y^n')
    cauchy_gaps: tuple            # sup_t |Y^2n - Y^n| along the list
    cauchy_decreasing: bool
    passed: bool
    failure: Optional[str] = None


def run_monotone_convergence(cfg: ExperimentConfig,
                             order_tol: float = 1e-6) -> MonotoneReport:
    """Nodewise ordering of the penalised family and uniform Cauchy decay."""
    if len(cfg.n_list) < 3:
        raise ValueError("need at least 3 penalty indices")
    vf = cfg.vector_field()
    rp = cfg.driver()
    Lp = cfg.boundary_path()
    Yn, _ = solve_penalised_family(vf, cfg.n_list, rp, Lp, cfg.y0)
    defect = 0.0
    failure = None
    for i in range(len(cfg.n_list) - 1):
        d = float(np.max(Yn[i] - Yn[i + 1]))
        if d > defect:
            defect = d
        if d > order_tol and failure is None:
            k = int(np.argmax(Yn[i] - Yn[i + 1]))
            failure = (f"ordering fails between n={cfg.n_list[i]} and "
                       f"n={cfg.n_list[i + 1]} at t={cfg.grid.nodes[k]:.4g}")
    gaps = tuple(float(np.max(np.abs(Yn[i + 1] - Yn[i])))
                 for i in range(len(cfg.n_list) - 1))
    dec = bool(np.all(np.diff(gaps) < 0.0))
    passed = defect <= order_tol and dec and failure is None
    return MonotoneReport(cfg.n_list, defect, gaps, dec, passed, failure)


# ---------------------------------------------------------------------------
# Malliavin derivative


def _volterra_c(H: float) -> float:
    return math.sqrt(H * (2 * H - 1) / beta_fn(2.0 - 2.0 * H, H - 0.5))


def volterra_kernel(t: float, s: float, H: float, rtol: float = 1e-9) -> float:
    """Transfer kernel from underlying white noise to fBm, H > 1/2.

    c_H s^{1/2-H} int_s^t u^{H-1/2} (u-s)^{H-3/2} du, evaluated after the
    substitution (u - s)^{H-1/2} = w which removes the endpoint singularity;
    the regular integral is refined by trapezoid doubling to rtol.
    """
    if not 0.5 < H < 1.0:
        raise ValueError("kernel requires H in (1/2, 1)")
    if s <= 0 or t <= s:
        return 0.0
    a = H - 0.5
    wmax = (t - s) ** a

    def f(w):
        u = s + w ** (1.0 / a)
        return (u / s) ** a

    val = None
    m = 16
    while m <= 1 << 20:
        w = np.linspace(0.0, wmax, m + 1)
        cur = float(np.trapezoid(f(w), w))
        if val is not None and abs(cur - val) <= rtol * max(1.0, abs(cur)):
            val = cur
            break
        val = cur
        m *= 2
    return _volterra_c(H) / a * val


@dataclass
class MalliavinReport:
    s_nodes: np.ndarray
    t: float
    D: np.ndarray                 # derivative at (s, t) for each s node
    kernel: str                   # "indicator" (H = 1/2) or "volterra"
    H: float
    exp_factor: np.ndarray        # exp(int_s^t (b' + psi_n') dv)
    bound: float                  # e^{sup|b'| T}
    bound_ok: bool


def malliavin_derivative(Y: np.ndarray, grid: TimeGrid, vf: VectorField,
                         n: float, L, H: float,
                         t: Optional[float] = None) -> MalliavinReport:
    """Derivative of the penalised solution at time t in the noise at s.

    The exponential factor exp(int_s^t (b'(Y) + psi_n'(Y - L)) dv) is the
    whole answer at H = 1/2; for H > 1/2 it is pushed through the Volterra
    kernel by the adjoint quadrature.  Requires constant scalar diffusion.
    """
    if not 0.5 <= H < 1.0:
        raise ValueError(f"H must be in [1/2, 1), got {H}")
    Y = path_on_grid(Y, grid)
    Lp = path_on_grid(L, grid)
    jt = grid.M if t is None else grid.index_of(t)
    t_val = grid.nodes[jt]
    phi = vf.db(Y) + _FAM.psi_prime(n, Y - Lp)
    # cumulative trapezoid of phi, then E_{s,t} = exp(P_t - P_s)
    P = np.concatenate([[0.0], np.cumsum(0.5 * grid.h * (phi[1:] + phi[:-1]))])
    s_nodes = grid.nodes[:jt + 1]
    E = np.exp(P[jt] - P[:jt + 1])
    bound = math.exp(vf.sup_db() * grid.T)
    if H == 0.5:
        D = E.copy()
        kernel = "indicator"
        ok = bool(np.all((D > 0) & (D <= bound * (1 + 1e-12))))
        if not ok:
            raise AssertionError(
                "derivative left the exponential band (0, e^{sup|b'| T}]")
    else:
        # adjoint of the Volterra kernel applied to u -> E_{u,t}, evaluated
        # at each s by regularised quadrature.
        D = np.zeros_like(E)
        a = H - 0.5
        cH = _volterra_c(H)
        Efun = lambda u: np.exp(P[jt] - np.interp(u, grid.nodes, P))
        for i, s in enumerate(s_nodes):
            if s <= 0 or s >= t_val:
                D[i] = 0.0 if s >= t_val else np.nan
                continue
            wmax = (t_val - s) ** a
            w = np.linspace(0.0, wmax, 513)
            u = s + w ** (1.0 / a)
            vals = Efun(u) * (u / s) ** a
            D[i] = cH / a * float(np.trapezoid(vals, w))
        kernel = "volterra"
        ok = bool(np.all((E > 0) & (E <= bound * (1 + 1e-12))))
    return MalliavinReport(s_nodes, float(t_val), D, kernel, H, E, bound, ok)


def malliavin_fd_check(cfg: ExperimentConfig, s: float, n: float,
                       eps: float = 1e-4, delta: Optional[float] = None):
    """Bump finite difference against the closed-form derivative, H = 1/2.

    Re-solves with the driver increased at rate eps over [s, s + delta] and
    divides the response at T by eps * delta.  Returns (fd, formula,
    relative error).
    """
    if cfg.H != 0.5:
        raise ValueError("finite-difference probe is wired for H = 1/2")
    vf = cfg.vector_field()
    rp = cfg.driver()
    g = cfg.grid
    Lp = cfg.boundary_path()
    delta = delta if delta is not None else 8 * g.h
    (Y,), _ = solve_penalised_family(vf, [n], rp, Lp, cfg.y0)
    bump = np.clip(g.nodes - s, 0.0, delta)[:, None]
    # central difference in the bump size removes the leading nonlinearity
    rp_up = RoughPathGrid(g, rp.X + eps * bump, rp.XX, rp.beta)
    rp_dn = RoughPathGrid(g, rp.X - eps * bump, rp.XX, rp.beta)
    (Y_up,), _ = solve_penalised_family(vf, [n], rp_up, Lp, cfg.y0)
    (Y_dn,), _ = solve_penalised_family(vf, [n], rp_dn, Lp, cfg.y0)
    fd = float(Y_up[-1] - Y_dn[-1]) / (2.0 * eps * delta)
    rep = malliavin_derivative(Y, g, vf, n, Lp, cfg.H)
    # the bump is spread over [s, s+delta]; compare with the window mean
    win = (rep.s_nodes >= s - 1e-12) & (rep.s_nodes <= s + delta + 1e-12)
    formula = float(np.mean(rep.D[win]))
    rel = abs(fd - formula) / max(1e-12, abs(formula))
    return fd, formula, rel


# ---------------------------------------------------------------------------
# Monte-Carlo density study


@dataclass
class DensityReport:
    mc_paths: int
    t: float
    hist_edges: np.ndarray
    hist_mass: np.ndarray         # probability mass per bin on (atom_eps, inf)
    atom_mass: float
    atom_threshold: float
    mass_defect: float            # |histogram + atom - 1|
    ks_stat: Optional[float]
    ks_p: Optional[float]
    reference: Optional[str]
    flags: tuple = ()


def _penalised_additive_batch(c: float, bfun, dX: np.ndarray, Lp: np.ndarray,
                              y0: float, h: float, n: int,
                              beta: float) -> np.ndarray:
    """Terminal values of the Richardson-extrapolated penalised solution for
    a batch of additive driver increments dX (paths, cells)."""
    P, m = dX.shape
    w = 2.0 ** (-beta) / (1.0 - 2.0 ** (-beta))
    Y = np.full((2, P), float(y0))
    n_arr = np.array([[n / 2.0], [float(n)]])
    for k in range(m):
        a = Y + c * dX[:, k][None, :]
        if bfun is not None:
            a = a + h * bfun(Y)
        Y = _implicit_psi_step(a, Lp[k + 1], h, n_arr)
    return Y[1] + w * (Y[1] - Y[0])


def run_density(cfg: ExperimentConfig, n: int = 1024, batch: int = 1000,
                bins: int = 50) -> DensityReport:
    """Monte-Carlo law of the penalised reflected solution at time T.

    Additive scalar diffusion only.  Paths are generated with the keyed
    generator and consumed in index order; memory stays bounded by
    streaming batches and keeping terminal values only.  When the law is
    known (no drift, H = 1/2, started on a flat boundary at 0) a
    Kolmogorov-Smirnov test against the half-normal reference is run.
    """
    if cfg.sigma.get("name") != "constant" or cfg.d != 1:
        raise ValueError("density study requires constant scalar diffusion")
    if cfg.H < 0.5:
        raise ValueError("density study requires H >= 1/2")
    if cfg.boundary.get("name") != "constant":
        raise ValueError("density study requires a flat boundary")
    flags = []
    if cfg.mc_paths < 10_000:
        flags.append("low-path-count: confidence intervals widened")
    g = cfg.grid
    Lp = cfg.boundary_path()
    c = float(np.atleast_1d(cfg.sigma.get("c", [1.0]))[0])
    bspec = cfg.drift.get("name", "zero")
    bfun = None
    if bspec != "zero":
        vf = cfg.vector_field()
        bfun = vf.b
    spec = FbmSpec(cfg.H, 1, g, cfg.seed)
    vals = np.empty(cfg.mc_paths)
    done = 0
    while done < cfg.mc_paths:
        nb = min(batch, cfg.mc_paths - done)
        dX = np.empty((nb, g.M))
        for j in range(nb):
            dX[j] = np.diff(sample_fbm(spec, done + j)[:, 0])
        vals[done:done + nb] = _penalised_additive_batch(
            c, bfun, dX, Lp, cfg.y0, g.h, n, cfg.beta)
        done += nb

    scale = abs(c) * cfg.T ** cfg.H
    atom_eps = 1e-3 * scale
    L0 = float(Lp[0])
    atom = float(np.mean(vals - L0 <= atom_eps))
    pos = vals[vals - L0 > atom_eps]
    hist, edges = np.histogram(pos, bins=bins)
    hist_mass = hist / cfg.mc_paths
    mass_defect = abs(atom + float(hist_mass.sum()) - 1.0)

    ks_stat = ks_p = None
    reference = None
    if bspec == "zero" and cfg.H == 0.5 and abs(cfg.y0 - L0) < 1e-12:
        res = stats.kstest(vals - L0, stats.halfnorm(scale=scale).cdf)
        ks_stat, ks_p = float(res.statistic), float(res.pvalue)
        reference = "half-normal"
    elif bspec == "zero" and cfg.y0 - L0 >= 5.0 * scale:
        res = stats.kstest(vals, stats.norm(loc=cfg.y0, scale=scale).cdf)
        ks_stat, ks_p = float(res.statistic), float(res.pvalue)
        reference = "gaussian (reflection inactive)"
    return DensityReport(cfg.mc_paths, cfg.T, edges, hist_mass, atom,
                         atom_eps, mass_defect, ks_stat, ks_p, reference,
                         tuple(flags))


# ---------------------------------------------------------------------------
# persistence


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])


def _plot_loglog(path: str, n_list, series: dict, title: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "rrde"   # byte-identical reruns
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, vals in series.items():
        ax.loglog(n_list, np.maximum(vals, 1e-300), marker="o", label=label)
    ax.set_xlabel("n")
    ax.set_ylabel("error")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def emit_outputs(report, cfg: ExperimentConfig, outdir: Optional[str] = None):
    """Persist a report: CSV table(s), an SVG plot when meaningful, and a
    JSON manifest (config hash, seed, versions).  Reruns with the same
    config produce byte-identical files."""
    outdir = outdir or cfg.outdir
    os.makedirs(outdir, exist_ok=True)
    files = []

    def man_path(name):
        p = os.path.join(outdir, name)
        files.append(p)
        return p

    if isinstance(report, RateReport):
        _write_csv(man_path("rate.csv"), ("n", "sup_err", "neg_part", "slope_so_far"),
                   report.rows())
        _plot_loglog(man_path("rate.svg"), report.n_list,
                     {"sup error": report.sup_err, "negative part": report.neg_part},
                     f"penalisation error, H={report.H}")
    elif isinstance(report, DensityReport):
        centers = 0.5 * (report.hist_edges[:-1] + report.hist_edges[1:])
        _write_csv(man_path("density.csv"), ("bin_center", "mass"),
                   [(float(a), float(b)) for a, b in zip(centers, report.hist_mass)])
        _write_csv(man_path("density_summary.csv"),
                   ("mc_paths", "atom_mass", "atom_threshold", "ks_stat", "ks_p"),
                   [(report.mc_paths, report.atom_mass, report.atom_threshold,
                     report.ks_stat if report.ks_stat is not None else float("nan"),
                     report.ks_p if report.ks_p is not None else float("nan"))])
    elif isinstance(report, MonotoneReport):
        _write_csv(man_path("monotone.csv"), ("n", "cauchy_gap"),
                   [(n, g) for n, g in zip(report.n_list[1:], report.cauchy_gaps)])
    elif isinstance(report, MalliavinReport):
        _write_csv(man_path("malliavin.csv"), ("s", "D", "exp_factor"),
                   [(float(s), float(d), float(e))
                    for s, d, e in zip(report.s_nodes, report.D, report.exp_factor)])
    else:
        raise TypeError(f"no emitter for report type {type(report).__name__}")

    manifest = {
        "config": json.loads(cfg.to_json()),
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "versions": {
            "package": __about__.__version__,
            "numpy": np.__version__,
        },
        "report_type": type(report).__name__,
        "files": [os.path.basename(f) for f in files],
    }
    mp = os.path.join(outdir, "manifest.json")
    with open(mp, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    files.append(mp)
    return files
