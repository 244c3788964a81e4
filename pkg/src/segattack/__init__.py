"""Targeted white-box attacks on a small dilated-conv segmentation net."""

from .attacks import (AsmaConfig, AttackResult, PgdConfig, TraceRow,
                      adaptive_alpha, asma_attack, asma_gradient, pgd_attack,
                      project_linf)
from .autodiff import (Tape, Tensor, add, backward, conv2d, cross_entropy,
                       finite_diff_check, masked_sum, mul, pixelwise_softmax,
                       relu, sum_all)
from .backend import backend_name
from .errors import DataFormatError, SegattackError, StageError, ValidationError
from .harness import (AttackJob, ExperimentConfig, ReportBundle, ReportRow,
                      default_experiment_config, emit_report, run_experiment,
                      select_target)
from .metrics import DiagnosticsRow, mean_iou, perturbation_l2, pixel_agreement
from .model import (ModelConfig, ModelParams, TrainConfig, clean_pixel_accuracy,
                    forward, init_model, load_model, predict_mask, save_model,
                    train)
from .scenes import LabeledImage, SceneSpec, generate_dataset, generate_scene

__version__ = "0.1.0"

__all__ = [
    "AsmaConfig", "AttackJob", "AttackResult", "DataFormatError",
    "DiagnosticsRow", "ExperimentConfig", "LabeledImage", "ModelConfig",
    "ModelParams", "PgdConfig", "ReportBundle", "ReportRow", "SceneSpec",
    "SegattackError", "StageError", "Tape", "Tensor", "TraceRow",
    "TrainConfig", "ValidationError", "adaptive_alpha", "add", "asma_attack",
    "asma_gradient", "backend_name", "backward", "clean_pixel_accuracy",
    "conv2d", "cross_entropy", "default_experiment_config", "emit_report",
    "finite_diff_check", "forward", "generate_dataset", "generate_scene",
    "init_model", "load_model", "masked_sum", "mean_iou", "mul",
    "perturbation_l2", "pgd_attack", "pixel_agreement", "pixelwise_softmax",
    "predict_mask", "project_linf", "relu", "run_experiment", "save_model",
    "select_target", "sum_all", "train",
]
