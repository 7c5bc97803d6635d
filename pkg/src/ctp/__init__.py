"""Confidence-based task-id prediction for exemplar-free class-incremental learning."""

from .continual import (
    EvalResult,
    ctp_ce_variant,
    evaluate,
    finetune_baseline,
    joint_baseline,
    sequential_train,
)
from .data import SyntheticSpec, TaskDataset, generate, load_csv, save_csv
from .errors import ConfigError, DataError, DegenerateVectorError
from .nn import (
    DenseNet,
    DisMaxHead,
    ExpertModel,
    LinearHead,
    TrainConfig,
    backward,
    dismax_loss,
    enhanced_logits,
    forward,
    isometric_distances,
    load_expert,
    predict_logits,
    save_expert,
    train_expert,
)
from .router import (
    ConfidenceReport,
    NoiseRegion,
    RouterConfig,
    classify,
    confidence_score,
    noise_percentiles,
    normalize_logits,
    predict_task,
    thresholds,
)

__all__ = [
    "EvalResult",
    "ctp_ce_variant",
    "evaluate",
    "finetune_baseline",
    "joint_baseline",
    "sequential_train",
    "DenseNet",
    "DisMaxHead",
    "ExpertModel",
    "LinearHead",
    "TrainConfig",
    "backward",
    "dismax_loss",
    "enhanced_logits",
    "forward",
    "isometric_distances",
    "load_expert",
    "predict_logits",
    "save_expert",
    "train_expert",
    "ConfidenceReport",
    "NoiseRegion",
    "RouterConfig",
    "classify",
    "confidence_score",
    "noise_percentiles",
    "normalize_logits",
    "predict_task",
    "thresholds",
    "SyntheticSpec",
    "TaskDataset",
    "generate",
    "load_csv",
    "save_csv",
    "ConfigError",
    "DataError",
    "DegenerateVectorError",
]

__version__ = "0.1.0"
