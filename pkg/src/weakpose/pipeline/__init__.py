"""Training orchestration, metrics, ablations and the CLI."""

from .ablate import ablate
from .config import VARIANTS, ConfigError, RunConfig, load_config, save_config
from .metrics import MAP_THRESHOLD, EvalReport, evaluate_predictions, mpjpe_cm
from .train import (
    TrainingError,
    TrainResult,
    evaluate,
    export_pseudo_labels,
    load_stage1,
    load_stage2,
    perturbation_shift,
    read_labels,
    train_stage1,
    train_stage2,
)

__all__ = [
    "ConfigError", "EvalReport", "MAP_THRESHOLD", "RunConfig", "TrainResult", "TrainingError", "VARIANTS",
    "ablate", "evaluate", "evaluate_predictions", "export_pseudo_labels", "load_config", "load_stage1",
    "load_stage2", "mpjpe_cm", "perturbation_shift", "read_labels", "save_config", "train_stage1", "train_stage2",
]
