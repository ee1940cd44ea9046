"""Matched-tuples designs for multi-arm and factorial experiments: blocking,
assignment, estimation, variance estimation, inference and simulation."""
from ._accel import BACKEND
from .assign import (
    AssignmentPlan,
    DesignKind,
    assign_bernoulli_factors,
    assign_factor_specific_mp,
    assign_matched_tuples,
    assign_replicate_tuples,
    assign_rerandomized,
    assign_stratified,
    mahalanobis_balance,
)
from .blocking import (
    BlockDiagnostics,
    block_by_ordering,
    block_prestratified,
    block_recursive_pairing,
    diagnose,
    exact_nonbipartite_match,
    greedy_nonbipartite_match,
)
from .core import (
    BlockPartition,
    Contrast,
    DesignError,
    FactorSpace,
    PotentialOutcomes,
    Sample,
    arm_of_levels,
    levels_of_arm,
    reveal,
)
from .estimate import (
    GammaHat,
    conditional_effect_contrast,
    delta_hat,
    gamma_hat,
    interaction_contrast,
    main_effect_contrast,
    pairwise_contrast,
    parse_contrast,
)
from .inference import TestResult, confidence_interval, t_test, wald_test
from .variance import (
    VarianceMethod,
    VarianceReport,
    rho_cross,
    rho_same_adjacent,
    rho_same_replicate,
    sigma2_hat,
    v_hat_adjusted,
    v_hat_bcve,
    v_hat_sfe,
    v_hat_strat_plugin,
    v_hat_two_control_quad,
    v_hat_two_sample,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
