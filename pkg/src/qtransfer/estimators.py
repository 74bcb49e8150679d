"""scikit-learn style wrapper around the regime models.

``HybridClassifier`` exposes fit/predict/predict_proba over the same
pipeline the CLI drives, so the models compose with sklearn tooling
(cross_val_score, Pipeline, clone).  2-d input is treated as pre-extracted
feature vectors; 4-d input as single-channel images.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .config import ExperimentConfig
from .data import Dataset
from .transfer import build, train
from .validation import ConfigError


class HybridClassifier(BaseEstimator, ClassifierMixin):
    """Quantum or classical head on an optionally pretrained extractor.

    Parameters mirror ExperimentConfig; ``checkpoint_path`` is required for
    the transfer regimes when fitting on images.
    """

    def __init__(self, regime: str = "quantum_no_tl", n_qubits: int = 6,
                 depth: int = 6, encoding: str = "tanh_half_pi",
                 epochs: int = 50, batch_size: int = 16, lr: float = 0.0004,
                 optimizer: str = "adam",
                 schedule: str = "constant_then_linear_decay",
                 init_spread: float = 0.01, ring: bool = False,
                 fixed_readout: bool = False, seed: int = 0,
                 checkpoint_path: str | None = None) -> None:
        self.regime = regime
        self.n_qubits = n_qubits
        self.depth = depth
        self.encoding = encoding
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.schedule = schedule
        self.init_spread = init_spread
        self.ring = ring
        self.fixed_readout = fixed_readout
        self.seed = seed
        self.checkpoint_path = checkpoint_path

    def _config(self) -> ExperimentConfig:
        return ExperimentConfig(
            regime=self.regime, n_qubits=self.n_qubits, depth=self.depth,
            encoding=self.encoding, epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr, optimizer=self.optimizer,
            schedule=self.schedule, init_spread=self.init_spread,
            ring=self.ring, fixed_readout=self.fixed_readout, seed=self.seed)

    def _as_dataset(self, X: np.ndarray, y_idx: np.ndarray, n_classes: int) -> Dataset:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            return Dataset(x=X, y=y_idx, class_count=n_classes, kind="feature_vector")
        if X.ndim == 4:
            return Dataset(x=X, y=y_idx, class_count=n_classes, kind="image")
        raise ConfigError(f"X must be 2-d features or 4-d images, got shape {X.shape}")

    def fit(self, X, y) -> "HybridClassifier":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.shape[0] != y.shape[0]:
            raise ConfigError(f"{X.shape[0]} inputs but {y.shape[0]} labels")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ConfigError("fit needs at least two classes")
        config = self._config()
        data = self._as_dataset(X, y_idx, self.classes_.size)
        self.model_ = build(config, self.checkpoint_path,
                            input_shape=X.shape[1:], n_classes=self.classes_.size,
                            input_kind=data.kind)
        self.history_ = train(self.model_, data, config)
        self.n_features_in_ = int(np.prod(X.shape[1:])) if X.ndim == 2 else None
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise ConfigError("estimator is not fitted; call fit first")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        return self.model_.predict_proba(np.asarray(X, dtype=np.float64))

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return self.classes_[self.model_.predict(np.asarray(X, dtype=np.float64))]
