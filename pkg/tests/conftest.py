"""Shared fixtures: the expensive sweeps are run once per session."""

import numpy as np
import pytest

from rrde.experiments import ExperimentConfig, run_density, run_rate


@pytest.fixture(scope="session")
def rate_reports():
    """Full-scale additive rate sweeps, one frozen driver per H."""
    reports = {}
    for H in (0.4, 0.5, 0.75):
        cfg = ExperimentConfig(
            H=H, M=4096, seed=7, y0=0.2,
            boundary={"name": "sine", "amp": 0.1, "freq": 5.0},
            n_list=(4, 8, 16, 32, 64, 128, 256, 512, 1024))
        reports[H] = run_rate(cfg)
    return reports


@pytest.fixture(scope="session")
def density_report():
    """Monte-Carlo law of reflected Brownian motion started on the boundary."""
    cfg = ExperimentConfig(H=0.5, M=4096, seed=7, y0=0.0, mc_paths=10_000)
    return run_density(cfg, n=1024)
