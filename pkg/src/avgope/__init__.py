"""Off-policy inference for the long-run average reward of target policies."""
from .core import (
    Dataset,
    Policy,
    ReferencePoint,
    Trajectory,
    TransitionBatch,
    TuningParams,
    always_policy,
    binned_policy,
    constant_policy,
    load_csv,
    threshold_policy,
    uniform_policy,
    validate_dataset,
    write_csv,
)
from .estimator import AverageRewardEstimator, FitResult, fit_coupled, predict_q
from .inference import (
    InferenceResult,
    confidence_interval,
    contrast_interval,
    covariance_matrix,
    density_ratio,
    fit_direction,
)
from .kernel import KernelSpec, ShiftedKernelSpec, median_heuristic
from .pipeline import Evaluation, OffPolicyEvaluator, evaluate_policies
from .tuning import TuningGrid, select_tuning, split_dataset, validation_score

__version__ = "0.1.0"

__all__ = [
    "AverageRewardEstimator",
    "Dataset",
    "Evaluation",
    "FitResult",
    "InferenceResult",
    "KernelSpec",
    "OffPolicyEvaluator",
    "Policy",
    "ReferencePoint",
    "ShiftedKernelSpec",
    "Trajectory",
    "TransitionBatch",
    "TuningGrid",
    "TuningParams",
    "always_policy",
    "binned_policy",
    "confidence_interval",
    "constant_policy",
    "contrast_interval",
    "covariance_matrix",
    "density_ratio",
    "evaluate_policies",
    "fit_coupled",
    "fit_direction",
    "load_csv",
    "median_heuristic",
    "predict_q",
    "select_tuning",
    "split_dataset",
    "threshold_policy",
    "uniform_policy",
    "validate_dataset",
    "validation_score",
    "write_csv",
]
