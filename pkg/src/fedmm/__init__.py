"""Deterministic simulator for federated training of per-modality feature
extractors with prototype alignment, plus baselines, a synthetic data
generator, and an experiment harness."""

__version__ = "0.1.0"

from .losses import LossBreakdown, LossSchedule, PrototypeSet, dynamic_loss, lambda_weight
from .nn import MlpParams, init_params, mlp_backward, mlp_forward, sgd_step, weighted_sum_params

__all__ = [
    "__version__",
    "LossBreakdown",
    "LossSchedule",
    "PrototypeSet",
    "dynamic_loss",
    "lambda_weight",
    "MlpParams",
    "init_params",
    "mlp_backward",
    "mlp_forward",
    "sgd_step",
    "weighted_sum_params",
]
