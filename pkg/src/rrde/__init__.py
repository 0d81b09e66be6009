"""Reflected rough differential equations by penalisation.

One-dimensional reflected RDEs constructed as limits of penalised RDEs:
rough-path plumbing, fBm sampling, penalised solvers (direct and
flow-composition), the explicit Skorokhod map with certificates, and
convergence / rate / density studies.
"""

from .__about__ import __version__
from .grid import TimeGrid, path_on_grid
from .rough import (ControlledPathGrid, RoughPathGrid, VariationReport,
                    chen_extend, covector_integral, holder_seminorm,
                    p_variation, phi_p, rough_integral, sewing_error_probe)
from .noise import (CovarianceGrid, FbmSpec, fbm_covariance,
                    fbm_covariance_grid, lift_geometric, rect_increment,
                    sample_fbm, second_order_r_variation)
from .penalty import (PenaltyFamily, ScalarPenalisedProblem, lemma_a1_check,
                      solve_scalar_penalised, verify_family)
from .solver import (FlowTable, PenalisedSolution, VectorField, a_priori_probe,
                     compute_flow, constant_sigma, cross_check,
                     doss_sussmann_solve, solve_penalised_family,
                     solve_penalised_rde, tanh_sigma)
from .skorokhod import (SkorokhodSolution, SPCertificate,
                        reflected_solve_additive, reflected_solve_limit,
                        skorokhod_map, skorokhod_map_paths, verify_sp)
from .experiments import (DensityReport, ExperimentConfig, MalliavinReport,
                          MonotoneReport, RateReport, emit_outputs,
                          malliavin_derivative, malliavin_fd_check, run_density,
                          run_monotone_convergence, run_rate)

__all__ = [name for name in dir() if not name.startswith("_")]
