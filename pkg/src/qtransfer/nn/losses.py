"""Softmax and cross-entropy with a stable log floor."""
from __future__ import annotations

import numpy as np

from ..validation import UsageError

PROB_FLOOR = 1e-12


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise UsageError("softmax on an empty array")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probs: np.ndarray, labels) -> float:
    """-log(p_label), floored at PROB_FLOOR; mean over the batch for 2-d input."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 1:
        label = int(labels)
        if not 0 <= label < p.shape[0]:
            raise UsageError(f"label {label} out of range for {p.shape[0]} classes")
        return float(-np.log(max(p[label], PROB_FLOOR)))
    if p.ndim != 2:
        raise UsageError(f"cross_entropy expects 1-d or 2-d probabilities, got shape {p.shape}")
    y = np.asarray(labels)
    if y.shape != (p.shape[0],):
        raise UsageError(f"labels shape {y.shape} does not match batch of {p.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise UsageError(f"labels out of range for {p.shape[1]} classes")
    picked = p[np.arange(p.shape[0]), y.astype(np.int64)]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """Fused loss for training.

    Returns (mean loss, probabilities, gradient of the loss w.r.t. logits).
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise UsageError(f"softmax_cross_entropy expects (batch, classes), got shape {z.shape}")
    probs = softmax(z)
    loss = cross_entropy(probs, labels)
    n = z.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(n), np.asarray(labels, dtype=np.int64)] -= 1.0
    dlogits /= n
    return loss, probs, dlogits
