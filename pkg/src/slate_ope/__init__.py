"""Off-policy evaluation for slate policies under factored logging.

Implements the IPS, PI, and control-variate-weighted PI++ estimators, an
enumeration-based risk oracle, and a Monte Carlo harness that measures the
risk improvement of PI++ over PI.
"""

__version__ = "0.1.0"

from .errors import (
    AbsoluteContinuityError,
    CapacityError,
    ConfigError,
    DegenerateSlotError,
    InvalidSlateError,
    SlateOpeError,
)
from .estimators import (
    AdditiveEstimatorParams,
    ControlVariateWeights,
    LoggedDataset,
    LoggedSample,
    estimate_additive,
    estimate_ips,
    estimate_pi,
    estimate_pi_plus_plus,
    optimal_cv_weights,
    pi_params,
)
from .harness import (
    EstimatorSummary,
    ExperimentConfig,
    RegressionFit,
    TensorResult,
    even_division_cardinalities,
    experiment_cardinality_grid,
    experiment_prior_grid,
    experiment_slot_sweep,
    fit_improvement_regression,
    generate_dataset,
    ols_fit,
    run_tensor,
    run_tensors,
    spawn_rng,
)
from .oracle import RiskPrediction, exact_bias, exact_variance, predicted_improvement
from .rewards import (
    ElementwiseAdditiveModel,
    ModelDrawConfig,
    PairwiseAdditiveModel,
    bernoulli_rate,
    draw_elementwise_model,
    draw_pairwise_model,
    enumerate_policy_value,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
    slate_rates,
    true_policy_value,
)
from .slates import (
    DivergenceSummary,
    FactoredPolicy,
    Slate,
    SlateSpec,
    compute_divergences,
    make_deterministic_policy,
    make_uniform_policy,
    sample_slate,
    sample_slates,
    slate_probability,
    slot_importance_weight,
    slot_weight_vectors,
)

__all__ = [
    "AbsoluteContinuityError",
    "AdditiveEstimatorParams",
    "CapacityError",
    "ConfigError",
    "ControlVariateWeights",
    "DegenerateSlotError",
    "DivergenceSummary",
    "ElementwiseAdditiveModel",
    "EstimatorSummary",
    "ExperimentConfig",
    "FactoredPolicy",
    "InvalidSlateError",
    "LoggedDataset",
    "LoggedSample",
    "ModelDrawConfig",
    "PairwiseAdditiveModel",
    "RegressionFit",
    "RiskPrediction",
    "Slate",
    "SlateOpeError",
    "SlateSpec",
    "TensorResult",
    "bernoulli_rate",
    "compute_divergences",
    "draw_elementwise_model",
    "draw_pairwise_model",
    "enumerate_policy_value",
    "estimate_additive",
    "estimate_ips",
    "estimate_pi",
    "estimate_pi_plus_plus",
    "even_division_cardinalities",
    "exact_bias",
    "exact_variance",
    "experiment_cardinality_grid",
    "experiment_prior_grid",
    "experiment_slot_sweep",
    "fit_improvement_regression",
    "generate_dataset",
    "load_model",
    "make_deterministic_policy",
    "make_uniform_policy",
    "model_from_dict",
    "model_to_dict",
    "ols_fit",
    "optimal_cv_weights",
    "pi_params",
    "predicted_improvement",
    "run_tensor",
    "run_tensors",
    "sample_slate",
    "sample_slates",
    "save_model",
    "slate_probability",
    "slate_rates",
    "slot_importance_weight",
    "slot_weight_vectors",
    "spawn_rng",
    "true_policy_value",
]
