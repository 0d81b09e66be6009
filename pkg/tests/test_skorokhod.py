"""Skorokhod map, reflected oracles, and the four-condition certificate."""

import numpy as np
import pytest
from scipy import stats

from rrde.grid import TimeGrid
from rrde.noise import FbmSpec, lift_geometric, sample_fbm
from rrde.skorokhod import (reflected_solve_additive, reflected_solve_limit,
                            skorokhod_map, skorokhod_map_paths, verify_sp)
from rrde.solver import SolverError, constant_sigma, tanh_sigma


@pytest.fixture(scope="module")
def bm_driver():
    g = TimeGrid(1.0, 512)
    x = sample_fbm(FbmSpec(0.5, 1, g, 8))
    return g, x, lift_geometric(x, g, 0.49)


def test_map_pure_pushing():
    t = np.linspace(0, 1, 101)
    Y, K = skorokhod_map(-t, np.zeros_like(t))
    assert np.allclose(Y, 0.0)
    assert np.allclose(K, t)


def test_map_sine_excursion():
    # z = sin t on [0, 3pi/2]: the running max of (-z)_+ reaches 1 at the end
    t = np.linspace(0, 1.5 * np.pi, 3001)
    Y, K = skorokhod_map(np.sin(t), np.zeros_like(t))
    assert K[-1] == pytest.approx(1.0, abs=1e-6)
    assert Y[-1] == pytest.approx(0.0, abs=1e-6)


def test_map_identity_off_boundary():
    t = np.linspace(0, 1, 64)
    z = 1.0 + 0.3 * np.sin(7 * t)
    Y, K = skorokhod_map(z, np.zeros_like(t))
    assert np.array_equal(Y, z)
    assert np.max(K) == 0.0


def test_map_rejects_start_below_boundary():
    with pytest.raises(ValueError):
        skorokhod_map(np.array([-1.0, 0.0]), np.zeros(2))


def test_map_two_lipschitz_in_sup_norm():
    rng = np.random.default_rng(4)
    L = 0.1 * np.sin(np.linspace(0, 6, 257))
    for _ in range(20):
        z1 = 0.5 + np.cumsum(np.concatenate([[0.0], rng.normal(0, 0.05, 256)]))
        z2 = z1 + rng.normal(0, 0.02, 257) * np.linspace(0, 1, 257)
        Y1, _ = skorokhod_map(z1, L)
        Y2, _ = skorokhod_map(z2, L)
        assert np.max(np.abs(Y1 - Y2)) <= 2.0 * np.max(np.abs(z1 - z2)) + 1e-14


def test_map_idempotent():
    rng = np.random.default_rng(5)
    L = -0.2 + 0.1 * np.cos(np.linspace(0, 5, 129))
    z = float(L[0]) + np.cumsum(np.concatenate([[0.0], rng.normal(0, 0.1, 128)]))
    Y, _ = skorokhod_map(z, L)
    Y2, K2 = skorokhod_map(Y, L)
    assert np.allclose(Y2, Y, atol=1e-14)
    assert np.max(K2) < 1e-14   # round-off where Y sits exactly on L


def test_map_paths_matches_scalar_version():
    rng = np.random.default_rng(6)
    L = 0.05 * np.sin(np.linspace(0, 4, 65))
    zs = 0.2 + np.cumsum(np.concatenate(
        [np.zeros((8, 1)), rng.normal(0, 0.1, (8, 64))], axis=1), axis=1)
    Yb, Kb = skorokhod_map_paths(zs, L)
    for i in range(8):
        Y, K = skorokhod_map(zs[i], L)
        assert np.array_equal(Yb[i], Y) and np.array_equal(Kb[i], K)


def test_certificate_passes_on_map_output(bm_driver):
    g, x, rp = bm_driver
    L = 0.1 * np.sin(5 * g.nodes)
    Y, K = skorokhod_map(0.3 + 0.7 * x[:, 0], L)
    cert = verify_sp(Y, K, L, constant_sigma(0.7), rp, 0.3)
    assert cert.passed
    assert cert.res_integral < 1e-12
    assert cert.res_above <= 1e-15
    assert cert.res_monotone == 0.0
    assert abs(cert.res_complementarity) < 1e-15


def test_certificate_includes_drift_term(bm_driver):
    g, x, rp = bm_driver
    L = 0.1 * np.sin(5 * g.nodes)
    bfun = lambda y: -0.5 * y
    vf = constant_sigma(0.7, b=bfun, db=lambda y: -0.5 * np.ones_like(y))
    sol = reflected_solve_additive(0.7, bfun, x, L, 0.3, g)
    cert = verify_sp(sol.Y, sol.K, L, vf, rp, 0.3)
    assert cert.passed
    assert cert.res_integral < 5.0 * max(cert.mesh_estimate, 1e-13)


def test_certificate_flags_injected_faults(bm_driver):
    g, x, rp = bm_driver
    L = 0.1 * np.sin(5 * g.nodes)
    Y, K = skorokhod_map(0.3 + 0.7 * x[:, 0], L)
    vf = constant_sigma(0.7)
    Kbad = K.copy()
    Kbad[200] += 1e-3  # decrease on the next cell
    assert verify_sp(Y, Kbad, L, vf, rp, 0.3).res_monotone > 1e-4
    idx = np.diff(K) > 1e-4
    Ybad = Y.copy()
    Ybad[1:][idx] += 2e-3  # lifted off the boundary where K pushes
    assert abs(verify_sp(Ybad, K, L, vf, rp, 0.3).res_complementarity) > 1e-6


def test_additive_fixed_point_with_drift(bm_driver):
    g, x, rp = bm_driver
    L = 0.1 * np.sin(5 * g.nodes)
    sol = reflected_solve_additive(0.7, lambda y: -0.5 * y, x, L, 0.3, g)
    assert sol.diagnostics["iterations"] <= 30
    assert np.min(sol.Y - L) >= -1e-14
    assert np.min(np.diff(sol.K)) >= 0.0


def test_additive_fixed_point_deterministic_push():
    g = TimeGrid(1.0, 100)
    sol = reflected_solve_additive(1.0, None, -g.nodes[:, None], np.zeros(101),
                                   0.0, g)
    assert np.allclose(sol.Y, 0.0)
    assert np.allclose(sol.K, g.nodes)


def test_reflected_bm_terminal_law_is_half_normal():
    rng = np.random.default_rng(42)
    M, P = 2048, 10_000
    dW = rng.normal(scale=np.sqrt(1.0 / M), size=(P, M))
    z = np.concatenate([np.zeros((P, 1)), np.cumsum(dW, axis=1)], axis=1)
    Y, _ = skorokhod_map_paths(z, np.zeros(M + 1))
    assert stats.kstest(Y[:, -1], stats.halfnorm.cdf).pvalue > 0.01


def test_limit_solver_matches_additive_oracle(bm_driver):
    g, x, rp = bm_driver
    L = 0.1 * np.sin(5 * g.nodes)
    oracle = reflected_solve_additive(0.7, None, x, L, 0.3, g)
    errs = {}
    for n_max in (64, 256, 1024):
        lim = reflected_solve_limit(constant_sigma(0.7), rp, L, 0.3, n_max)
        errs[n_max] = np.max(np.abs(lim.Y - oracle.Y))
    assert errs[1024] < 0.05
    assert errs[1024] < errs[256] < errs[64]
    # integral identity of the extrapolated pair is exact by construction
    lim = reflected_solve_limit(constant_sigma(0.7), rp, L, 0.3, 1024)
    assert lim.certificate.res_integral < 1e-12


def test_limit_solver_inactive_boundary(bm_driver):
    g, x, rp = bm_driver
    lim = reflected_solve_limit(tanh_sigma(0.5, 0.3), rp, np.full(513, -50.0),
                                0.2, 64)
    assert np.max(np.abs(lim.K)) == 0.0
    assert lim.certificate.passed


def test_limit_solver_state_dependent_certificate(bm_driver):
    g, x, rp = bm_driver
    L = 0.1 * np.sin(5 * g.nodes) + 0.05
    lim = reflected_solve_limit(tanh_sigma(0.5, 0.3), rp, L, 0.2, 1024,
                                tol_factor=0.05)
    cert = lim.certificate
    assert cert.passed
    # reflection residuals of the extrapolated pair decay like n^{-beta};
    # at n_max = 1024 they sit at the 1e-2 level for this driver
    assert cert.res_above < 0.02
    assert abs(cert.res_complementarity) < 0.02


def test_limit_solver_validates_n_max(bm_driver):
    g, x, rp = bm_driver
    with pytest.raises(ValueError):
        reflected_solve_limit(constant_sigma(0.7), rp, np.zeros(513), 0.3, 48)


def test_complementarity_residual_decays_with_n(bm_driver):
    g, x, rp = bm_driver
    L = 0.1 * np.sin(5 * g.nodes)
    res = [abs(reflected_solve_limit(constant_sigma(0.7), rp, L, 0.3, n_max,
                                     tol_factor=0.05)
               .certificate.res_complementarity)
           for n_max in (16, 128, 1024)]
    assert res[2] < res[0]
