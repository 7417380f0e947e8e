"""Importance-sampled minibatch training with online variance-reduction estimates."""

from .data import Dataset, load_csv_dataset, save_csv_dataset, synthesize_gaussian_mixture
from .emais_state import ImportanceState, TauMode, effective_tau, refresh_all
from .nn_core import LossKind, ModelParams, cosine_lr, init_params
from .sampling import SamplingPlan, adjust_probabilities, importance_coefficients, normalize_weights
from .trainer import TrainConfig, TrainLog, evaluate, train, train_emais, train_uniform, train_uniform_dynamic
from .variance_metrics import (
    TraceEstimates,
    adjusted_learning_rate,
    effective_minibatch_size,
    efficiency_score,
    estimate_traces,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "load_csv_dataset", "save_csv_dataset", "synthesize_gaussian_mixture",
    "ImportanceState", "TauMode", "effective_tau", "refresh_all",
    "LossKind", "ModelParams", "cosine_lr", "init_params",
    "SamplingPlan", "adjust_probabilities", "importance_coefficients", "normalize_weights",
    "TrainConfig", "TrainLog", "evaluate", "train", "train_emais", "train_uniform",
    "train_uniform_dynamic",
    "TraceEstimates", "adjusted_learning_rate", "effective_minibatch_size", "efficiency_score",
    "estimate_traces",
]
