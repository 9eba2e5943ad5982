"""Latent class proportional hazards models for right-censored data.

Fits finite mixtures of proportional-hazards submodels with a shared
nonparametric baseline by EM, provides profile-likelihood standard errors,
information criteria for choosing the number of classes, Brier-score
prediction assessment, and a simulation harness.
"""

from .data import (
    Dataset,
    ModelConfig,
    Observation,
    Parameters,
    PosteriorWeights,
    StepFunction,
)
from .em import (
    EmState,
    RiskSetIndex,
    aitken_stop,
    breslow_update,
    e_step,
    fit,
    initialize_weights,
    m_step_alpha,
    m_step_gamma,
)
from .errors import (
    ConvergenceError,
    DegenerateModelError,
    FitError,
    MonotonicityError,
    SeparationError,
    SingularMatrixError,
)
from .inference import (
    CovarianceResult,
    covariance,
    nonconvergence_flag,
    profile_loglik_at,
    wald_intervals,
)
from .likelihood import (
    class_density,
    class_membership_probs,
    expand_design,
    mixture_loglik,
)
from .prediction import (
    BrierCurve,
    SurvivalCurve,
    brier_scores,
    cross_validated_brier,
    kaplan_meier,
    predicted_survival,
)
from .selection import CriteriaReport, criteria, select_L
from .simulation import (
    ReplicateSummary,
    ScenarioSpec,
    generate,
    run_brier_study,
    run_replicates,
    run_selection_study,
    scenario,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ModelConfig",
    "Observation",
    "Parameters",
    "PosteriorWeights",
    "StepFunction",
    "EmState",
    "RiskSetIndex",
    "aitken_stop",
    "breslow_update",
    "e_step",
    "fit",
    "initialize_weights",
    "m_step_alpha",
    "m_step_gamma",
    "FitError",
    "SeparationError",
    "SingularMatrixError",
    "ConvergenceError",
    "MonotonicityError",
    "DegenerateModelError",
    "CovarianceResult",
    "covariance",
    "nonconvergence_flag",
    "profile_loglik_at",
    "wald_intervals",
    "class_density",
    "class_membership_probs",
    "expand_design",
    "mixture_loglik",
    "BrierCurve",
    "SurvivalCurve",
    "brier_scores",
    "cross_validated_brier",
    "kaplan_meier",
    "predicted_survival",
    "CriteriaReport",
    "criteria",
    "select_L",
    "ReplicateSummary",
    "ScenarioSpec",
    "generate",
    "run_brier_study",
    "run_replicates",
    "run_selection_study",
    "scenario",
]
