"""Optimizers and learning-rate schedules.

Optimizers mutate parameter arrays in place.  ``step`` takes (key, param,
grad) triples; the key identifies per-parameter state across steps, so the
caller must use stable keys (and simply omit frozen parameters).
"""
from __future__ import annotations

import numpy as np

from ..validation import ConfigError, shape_mismatch

SCHEDULE_KINDS = ("constant_then_linear_decay", "step_decay_0.1_every_10")
OPTIMIZER_KINDS = ("adam", "sgd")


class SGD:
    """Plain gradient descent: theta <- theta - lr * grad."""

    def __init__(self, lr: float) -> None:
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.lr = lr

    def step(self, items, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for key, param, grad in items:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != param.shape:
                raise shape_mismatch(f"gradient for {key}", param.shape, grad.shape)
            param -= lr * grad


class Adam:
    """Adam with bias correction; first/second moments keyed by parameter name."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> None:
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, items, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for key, param, grad in items:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != param.shape:
                raise shape_mismatch(f"gradient for {key}", param.shape, grad.shape)
            m, v = self.moments.get(key, (np.zeros_like(param), np.zeros_like(param)))
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            self.moments[key] = (m, v)
            param -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr)
    if kind == "sgd":
        return SGD(lr)
    raise ConfigError(f"unknown optimizer {kind!r}; choose from {OPTIMIZER_KINDS}")


def scheduled_lr(kind: str, base_lr: float, epoch: int, total_epochs: int) -> float:
    """Learning rate for a given epoch under the named schedule."""
    if not 0 <= epoch < total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs})")
    if kind == "step_decay_0.1_every_10":
        return base_lr * 0.1 ** (epoch // 10)
    if kind == "constant_then_linear_decay":
        half = total_epochs // 2
        if epoch < half:
            return base_lr
        return base_lr * (total_epochs - epoch) / (total_epochs - half)
    raise ConfigError(f"unknown schedule {kind!r}; choose from {SCHEDULE_KINDS}")
