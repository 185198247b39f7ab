"""Average exposure effects under structural mean models with an instrument
for difference-in-differences.

Estimators cover the panel design (additive Wald ratio, multiplicative
no-covariate quadratic, parametric-m moment system with sandwich variance,
cross-fitted influence-function estimation with m unspecified, and linear
effect modification) and the repeated cross-sectional design (cell-mean root
solve and the propensity-weighted moment system). A Monte Carlo harness and a
planted-truth replication utility round out the package.
"""

from .datasets import (
    EffectSpec,
    PanelData,
    RcsData,
    ValidationReport,
    load_panel_csv,
    load_rcs_csv,
    validate,
)
from .exceptions import (
    DataError,
    EstimationError,
    IdidSmmError,
    LearnerError,
    SimulationError,
)
from .learners import (
    BasisLeastSquares,
    FoldAssignment,
    KnnLearner,
    LinearMeanLearner,
    LogLinkLearner,
    LogitLinkLearner,
    StackedLearner,
    learner_from_config,
    make_folds,
)
from .nuisance import NuisanceValues, OracleNuisance, fit_nuisance_values
from .panel_nocov import (
    AdditiveWaldEstimator,
    MultiplicativeNoCovEstimator,
    bootstrap_ci,
    quadratic_coefficients,
    solve_multiplicative_nocov,
    wald_additive,
)
from .panel_nonparam import (
    EffectModifierEstimator,
    NonparametricEstimator,
    estimate_nonparam,
    estimate_nonparam_modifiers,
    influence_phi,
    remainder_second_order,
)
from .panel_param import (
    MSpec,
    MomentSpec,
    ParametricMomentEstimator,
    estimate_param,
    misspecified_fit_a1,
    residual_epsilon,
)
from .repeated_cs import (
    RcsNoCovEstimator,
    RcsParametricEstimator,
    estimate_rcs_param,
    pi_residual,
    solve_rcs_nocov,
)
from .results import Estimate, VectorEstimate, wald_interval
from .simulation import (
    SETTINGS,
    SimulationSetting,
    StudyReport,
    TwoPeriodMarginals,
    generate,
    generate_rcs_planted,
    metrics,
    run_study,
)

__version__ = "0.1.0"

__all__ = [
    "AdditiveWaldEstimator",
    "BasisLeastSquares",
    "DataError",
    "EffectModifierEstimator",
    "EffectSpec",
    "Estimate",
    "EstimationError",
    "FoldAssignment",
    "IdidSmmError",
    "KnnLearner",
    "LearnerError",
    "LinearMeanLearner",
    "LogLinkLearner",
    "LogitLinkLearner",
    "MSpec",
    "MomentSpec",
    "MultiplicativeNoCovEstimator",
    "NonparametricEstimator",
    "NuisanceValues",
    "OracleNuisance",
    "PanelData",
    "ParametricMomentEstimator",
    "RcsData",
    "RcsNoCovEstimator",
    "RcsParametricEstimator",
    "SETTINGS",
    "SimulationError",
    "SimulationSetting",
    "StackedLearner",
    "StudyReport",
    "TwoPeriodMarginals",
    "ValidationReport",
    "VectorEstimate",
    "bootstrap_ci",
    "estimate_nonparam",
    "estimate_nonparam_modifiers",
    "estimate_param",
    "estimate_rcs_param",
    "fit_nuisance_values",
    "generate",
    "generate_rcs_planted",
    "influence_phi",
    "learner_from_config",
    "load_panel_csv",
    "load_rcs_csv",
    "make_folds",
    "metrics",
    "misspecified_fit_a1",
    "pi_residual",
    "quadratic_coefficients",
    "remainder_second_order",
    "residual_epsilon",
    "run_study",
    "solve_multiplicative_nocov",
    "solve_rcs_nocov",
    "validate",
    "wald_additive",
    "wald_interval",
]
