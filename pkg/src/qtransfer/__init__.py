"""Hybrid quantum-classical transfer learning with FGSM adversarial robustness.

The package trains a small image classifier whose head is either a
variational quantum circuit simulated exactly on a built-in statevector
engine or a width-matched classical block, on top of a frozen pretrained
feature extractor.  FGSM attacks and adversarial training close the loop.
"""
from .adversarial import (
    ATTACK_BUDGET_PRESETS,
    AttackConfig,
    adversarial_train,
    evaluate_under_attack,
    fgsm,
)
from .config import DataSourceConfig, ExperimentConfig, seed_stream
from .data import Dataset, load_feature_csv, load_idx, save_feature_csv, save_idx, split, synth_generate
from .estimators import HybridClassifier
from .qvc import EncodingSpec, QvcParams
from .transfer import (
    CheckpointError,
    Model,
    TrainingDivergedError,
    build,
    evaluate,
    load_model,
    pretrain,
    save_model,
    train,
)
from .validation import ConfigError, ShapeMismatchError, UsageError

__version__ = "0.1.0"

__all__ = [
    "ATTACK_BUDGET_PRESETS",
    "AttackConfig",
    "CheckpointError",
    "ConfigError",
    "DataSourceConfig",
    "Dataset",
    "EncodingSpec",
    "ExperimentConfig",
    "HybridClassifier",
    "Model",
    "QvcParams",
    "ShapeMismatchError",
    "TrainingDivergedError",
    "UsageError",
    "adversarial_train",
    "build",
    "evaluate",
    "evaluate_under_attack",
    "fgsm",
    "load_feature_csv",
    "load_idx",
    "load_model",
    "pretrain",
    "save_feature_csv",
    "save_idx",
    "save_model",
    "seed_stream",
    "split",
    "synth_generate",
    "train",
]
