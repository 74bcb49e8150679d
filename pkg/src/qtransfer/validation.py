"""Shared error types and input validation helpers."""
from __future__ import annotations

import numpy as np


class ConfigError(ValueError):
    """A setting is out of range or inconsistent (bad qubit count, h <= 0, ...)."""


class ShapeMismatchError(ValueError):
    """Array shapes are incompatible; the message reports both shapes."""


class UsageError(RuntimeError):
    """An operation was called out of order (backward before forward, ...)."""


def shape_mismatch(what: str, expected, got) -> ShapeMismatchError:
    return ShapeMismatchError(f"{what}: expected shape {tuple(expected)}, got {tuple(got)}")


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_float_array(name: str, x, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeMismatchError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    return arr


def check_labels(y, n_classes: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeMismatchError(f"labels: expected 1-d array, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        yi = y.astype(np.int64)
        if not np.array_equal(yi, y):
            raise ValueError("labels must be integer class indices")
        y = yi
    if y.size and y.min() < 0:
        raise ValueError("labels must be non-negative")
    if n_classes is not None and y.size and y.max() >= n_classes:
        raise ValueError(f"label {int(y.max())} out of range for {n_classes} classes")
    return y.astype(np.int64)
