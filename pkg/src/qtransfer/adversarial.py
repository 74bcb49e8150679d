"""FGSM attack, attacked evaluation, and adversarial training.

The attack needs only a duck-typed model exposing
``loss_input_gradient(x, y) -> (grad, loss)`` where ``grad`` holds per-sample
gradients of the cross-entropy with respect to the raw inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .data import Dataset
from .transfer import Model, evaluate, train
from .validation import ConfigError, UsageError

ATTACK_BUDGET_PRESETS = {
    "standard": (0.1, 0.2, 0.3),
    "extended": (0.1, 0.3, 1.0),
}


@dataclass(frozen=True)
class AttackConfig:
    """L-infinity budget, valid input range, and AT batch mix."""

    epsilon: float
    input_bounds: tuple[float, float] = (0.0, 1.0)
    mix_ratio: float = 0.5

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be non-negative, got {self.epsilon}")
        low, high = self.input_bounds
        if not low < high:
            raise ConfigError(f"input_bounds must satisfy low < high, got {self.input_bounds}")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ConfigError(f"mix_ratio must lie in [0, 1], got {self.mix_ratio}")


def clip_perturbation(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp every element of delta to [-epsilon, epsilon]."""
    if epsilon < 0:
        raise ConfigError(f"epsilon must be non-negative, got {epsilon}")
    return np.clip(np.asarray(delta, dtype=np.float64), -epsilon, epsilon)


def fgsm(model, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """x + epsilon * sign(grad_x loss), clamped to the valid input range.

    epsilon = 0 returns a bit-identical copy without touching the model.
    """
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0.0:
        return x.copy()
    grad, _ = model.loss_input_gradient(x, y)
    x_adv = x + cfg.epsilon * np.sign(grad)
    low, high = cfg.input_bounds
    return np.clip(x_adv, low, high)


def evaluate_under_attack(model: Model, dataset: Dataset, cfg: AttackConfig) -> float:
    """Accuracy on per-sample non-targeted FGSM examples built from true labels."""
    if len(dataset) == 0:
        raise UsageError("evaluate_under_attack needs a non-empty dataset")
    correct = 0
    batch = 256
    for start in range(0, len(dataset), batch):
        x, y = dataset.x[start:start + batch], dataset.y[start:start + batch]
        x_adv = fgsm(model, x, y, cfg)
        logits = model.forward(x_adv, train=False)
        correct += int((logits.argmax(axis=1) == y).sum())
    return correct / len(dataset)


def make_batch_attack(cfg: AttackConfig):
    """Training hook perturbing the first round(mix_ratio * batch) samples.

    The batch arrives already shuffled, so the deterministic prefix is an
    unbiased sample; mix_ratio = 0 returns the batch object untouched, which
    keeps the run bit-identical to plain training.
    """

    def hook(model, xb: np.ndarray, yb: np.ndarray) -> np.ndarray:
        k = int(round(cfg.mix_ratio * xb.shape[0]))
        if k == 0:
            return xb
        out = np.array(xb, dtype=np.float64)
        out[:k] = fgsm(model, xb[:k], yb[:k], cfg)
        return out

    return hook


def adversarial_train(model: Model, train_set: Dataset, config: ExperimentConfig,
                      attack: AttackConfig, eval_set: Dataset | None = None,
                      epochs: int | None = None) -> tuple[Model, list[dict]]:
    """Online FGSM adversarial training; records attacked accuracy per epoch."""
    probe_set = eval_set if eval_set is not None else train_set

    def extra(m: Model) -> dict:
        return {"attacked_accuracy": evaluate_under_attack(m, probe_set, attack)}

    history = train(model, train_set, config, eval_set=eval_set,
                    attack_fn=make_batch_attack(attack), epochs=epochs,
                    epoch_metrics=extra)
    return model, history
