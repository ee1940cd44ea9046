"""Simulation DGPs, analytic variance oracles and the study harness."""
from .dgp import CALIBRATED_BETA, DgpSpec, Model, draw_potential_outcomes, load_covariate_pool
from .oracle import OracleVariance, oracle_variance, xi_terms
from .study import (
    DEFAULT_PARAMETERS,
    StudyConfig,
    StudyReport,
    apply_design,
    run_mse_study,
    run_power_curve,
    run_size_power_study,
    run_study,
)

__all__ = [
    "CALIBRATED_BETA",
    "DEFAULT_PARAMETERS",
    "DgpSpec",
    "Model",
    "OracleVariance",
    "StudyConfig",
    "StudyReport",
    "apply_design",
    "draw_potential_outcomes",
    "load_covariate_pool",
    "oracle_variance",
    "run_mse_study",
    "run_power_curve",
    "run_size_power_study",
    "run_study",
    "xi_terms",
]
