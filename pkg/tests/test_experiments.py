"""Experiment configuration, rate/monotone/Malliavin/density studies, and
reproducible output emission."""

import hashlib
import json
import os

import numpy as np
import pytest
from scipy.integrate import quad

from rrde.grid import TimeGrid
from rrde.experiments import (DensityReport, ExperimentConfig, MonotoneReport,
                              RateReport, _volterra_c, emit_outputs,
                              malliavin_derivative, malliavin_fd_check,
                              run_density, run_monotone_convergence, run_rate,
                              volterra_kernel)
from rrde.solver import constant_sigma


def test_config_roundtrip_and_digest():
    cfg = ExperimentConfig(H=0.4, M=512, seed=3, n_list=(4, 16, 64),
                           boundary={"name": "sine", "amp": 0.1, "freq": 5.0},
                           y0=0.2)
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.digest() == cfg.digest()
    assert len(cfg.digest()) == 16


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(H=0.5, beta=0.2)               # beta out of range
    with pytest.raises(ValueError):
        ExperimentConfig(H=0.5, alpha=0.3)              # boundary too rough
    with pytest.raises(ValueError):
        ExperimentConfig(H=0.5, y0=-1.0)                # starts below boundary
    with pytest.raises(ValueError):
        ExperimentConfig(H=0.5, n_list=(8, 4))          # not increasing
    with pytest.raises(ValueError):
        ExperimentConfig(H=0.5, sigma={"name": "magic"}).vector_field()
    with pytest.raises(ValueError):
        ExperimentConfig(H=0.5, boundary={"name": "step"})
    assert ExperimentConfig(H=0.4).beta == pytest.approx(0.39)


def test_config_driver_is_deterministic():
    cfg = ExperimentConfig(H=0.5, M=128, seed=11)
    a, b = cfg.driver(), cfg.driver()
    assert np.array_equal(a.X, b.X)
    assert np.array_equal(a.XX, b.XX)


def test_run_rate_small_additive():
    cfg = ExperimentConfig(H=0.5, M=512, seed=7, n_list=(4, 8, 16, 32, 64, 128),
                           boundary={"name": "sine", "amp": 0.1, "freq": 5.0},
                           y0=0.2)
    rep = run_rate(cfg)
    assert rep.provenance == "additive-oracle"
    assert rep.nonneg_ok and rep.monotone_ok
    assert rep.slope_err < -0.3
    assert rep.certificate.passed
    rows = rep.rows()
    assert len(rows) == 6 and rows[0][0] == 4
    assert np.isnan(rows[0][3]) and np.isfinite(rows[-1][3])


def test_run_rate_state_dependent_provenance():
    cfg = ExperimentConfig(H=0.5, M=256, seed=7, n_list=(8, 32, 128),
                           sigma={"name": "tanh", "c0": 0.5, "c1": 0.3},
                           boundary={"name": "sine", "amp": 0.1, "freq": 5.0},
                           y0=0.2)
    rep = run_rate(cfg)
    assert rep.provenance.startswith("extrapolated-limit")
    assert rep.nonneg_ok


def test_run_monotone_convergence():
    cfg = ExperimentConfig(H=0.5, M=1024, seed=0, y0=0.0,
                           sigma={"name": "tanh", "c0": 0.5, "c1": 0.3},
                           boundary={"name": "sine", "amp": 0.1, "freq": 5.0},
                           n_list=(4, 8, 16, 32, 64, 128, 256, 512, 1024))
    rep = run_monotone_convergence(cfg)
    assert rep.passed
    assert rep.max_order_defect <= 1e-6
    assert rep.cauchy_decreasing
    with pytest.raises(ValueError):
        run_monotone_convergence(ExperimentConfig(H=0.5, n_list=(4, 8)))


def test_malliavin_constant_drift_closed_form():
    g = TimeGrid(1.0, 256)
    mu = -0.4
    vf = constant_sigma(1.0, b=lambda y: mu * y,
                        db=lambda y: mu * np.ones_like(y))
    Y = np.full(257, 5.0)                       # boundary never active
    rep = malliavin_derivative(Y, g, vf, 8.0, np.full(257, -50.0), 0.5)
    assert np.max(np.abs(rep.D - np.exp(mu * (1.0 - rep.s_nodes)))) < 1e-10
    assert rep.kernel == "indicator"
    assert rep.bound_ok


def test_malliavin_truncates_at_t():
    g = TimeGrid(1.0, 256)
    vf = constant_sigma(1.0)
    Y = np.full(257, 5.0)
    rep = malliavin_derivative(Y, g, vf, 8.0, np.full(257, -50.0), 0.5, t=0.5)
    assert len(rep.s_nodes) == g.index_of(0.5) + 1
    assert rep.t == pytest.approx(0.5)
    assert rep.D[-1] == pytest.approx(1.0)      # s = t, empty exponent window


def test_malliavin_rejects_h_below_half():
    g = TimeGrid(1.0, 64)
    with pytest.raises(ValueError):
        malliavin_derivative(np.zeros(65), g, constant_sigma(1.0), 4.0,
                             np.full(65, -1.0), 0.4)
    with pytest.raises(ValueError):
        volterra_kernel(1.0, 0.5, 0.4)


def test_volterra_kernel_matches_quadrature_oracle():
    H, s, t = 0.75, 0.3, 0.9
    a = H - 0.5
    oracle = _volterra_c(H) * s ** (-a) * quad(
        lambda u: u ** a * (u - s) ** (a - 1.0), s, t)[0]
    assert volterra_kernel(t, s, H) == pytest.approx(oracle, abs=1e-8)
    assert volterra_kernel(0.5, 0.9, H) == 0.0   # t <= s


def test_malliavin_volterra_reduces_to_kernel_without_drift():
    # b = 0 and inactive penalty make the exponential factor 1, so the
    # derivative at (s, t) is the transfer kernel itself
    g = TimeGrid(1.0, 128)
    H = 0.75
    vf = constant_sigma(1.0)
    Y = np.full(129, 5.0)
    rep = malliavin_derivative(Y, g, vf, 8.0, np.full(129, -50.0), H)
    for i in (20, 64, 100):
        s = rep.s_nodes[i]
        assert rep.D[i] == pytest.approx(volterra_kernel(1.0, s, H), rel=1e-4)
    assert np.isnan(rep.D[0])                   # kernel diverges as s -> 0


def test_malliavin_fd_probe():
    cfg = ExperimentConfig(H=0.5, M=2048, seed=7, y0=0.2,
                           drift={"name": "tanh", "c": -0.5},
                           boundary={"name": "sine", "amp": 0.1, "freq": 5.0})
    fd, formula, rel = malliavin_fd_check(cfg, 0.37, 8.0)
    assert rel < 1e-2
    with pytest.raises(ValueError):
        malliavin_fd_check(ExperimentConfig(H=0.75, M=64), 0.3, 8.0)


def test_run_density_gaussian_regime(tmp_path):
    # started far above a flat boundary over a short horizon the reflection
    # never triggers and the law is the driving Gaussian
    cfg = ExperimentConfig(H=0.5, M=512, seed=3, y0=3.0, T=0.25, mc_paths=800,
                           outdir=str(tmp_path))
    rep = run_density(cfg, n=256, batch=400)
    assert rep.reference == "gaussian (reflection inactive)"
    assert rep.ks_p > 0.01
    assert rep.atom_mass == 0.0
    assert rep.mass_defect < 1e-12
    assert any("low-path-count" in f for f in rep.flags)


def test_run_density_validation():
    with pytest.raises(ValueError):
        run_density(ExperimentConfig(H=0.4, mc_paths=10))
    with pytest.raises(ValueError):
        run_density(ExperimentConfig(
            H=0.5, mc_paths=10,
            sigma={"name": "tanh", "c0": 0.5, "c1": 0.3}))
    with pytest.raises(ValueError):
        run_density(ExperimentConfig(
            H=0.5, mc_paths=10, y0=0.2,
            boundary={"name": "sine", "amp": 0.1, "freq": 5.0}))


def _hashes(files):
    return {os.path.basename(f): hashlib.sha256(open(f, "rb").read()).hexdigest()
            for f in files}


def test_emit_outputs_byte_identical_rerun(tmp_path):
    cfg = ExperimentConfig(H=0.5, M=256, seed=7, n_list=(4, 8, 16, 32),
                           boundary={"name": "sine", "amp": 0.1, "freq": 5.0},
                           y0=0.2, outdir=str(tmp_path))
    h1 = _hashes(emit_outputs(run_rate(cfg), cfg))
    h2 = _hashes(emit_outputs(run_rate(cfg), cfg))
    assert h1 == h2
    assert set(h1) == {"rate.csv", "rate.svg", "manifest.json"}
    man = json.load(open(tmp_path / "manifest.json"))
    assert man["config_hash"] == cfg.digest()
    assert man["report_type"] == "RateReport"
    assert man["seed"] == 7


def test_emit_outputs_monotone_and_density(tmp_path):
    cfg = ExperimentConfig(H=0.5, M=256, seed=0, y0=0.0,
                           sigma={"name": "tanh", "c0": 0.5, "c1": 0.3},
                           boundary={"name": "sine", "amp": 0.1, "freq": 5.0},
                           n_list=(4, 8, 16), outdir=str(tmp_path / "m"))
    files = emit_outputs(run_monotone_convergence(cfg), cfg)
    assert os.path.exists(tmp_path / "m" / "monotone.csv")
    cfgd = ExperimentConfig(H=0.5, M=128, seed=3, y0=3.0, T=0.25, mc_paths=200,
                            outdir=str(tmp_path / "d"))
    emit_outputs(run_density(cfgd, n=64, batch=100), cfgd)
    assert os.path.exists(tmp_path / "d" / "density_summary.csv")
    with pytest.raises(TypeError):
        emit_outputs(object(), cfg)
