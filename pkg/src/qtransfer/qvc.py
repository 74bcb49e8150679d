"""Variational quantum classifier head.

Circuit layout: per wire H then RY(encoded feature), followed by `depth`
entangling layers. Each layer applies a CNOT chain (optionally closed into a
ring) and then RX/RY/RZ rotations with trainable angles on every wire; the
readout is <Z> on each wire.

Gradients come in three flavours:

- `param_shift_gradient`: exact via +/- pi/2 shifted evaluations,
- `finite_difference_gradient`: one-sided (or central) differences, kept as
  the slower approximate alternative and as a cross-check,
- `input_gradient`: exact gradient with respect to the raw input features,
  which lets attacks and upstream classical layers backpropagate through
  the circuit.

The `*_batch` variants evaluate many samples (and all their shifted circuits)
in one stacked simulation; the scalar API delegates to them with batch 1, so
both run identical arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .statevector import (
    StateVector,
    apply_cnot_chain_batch,
    apply_h_batch,
    apply_ry_batch,
    apply_su2_batch,
    encoded_product_state_batch,
    expectation_z_all,
    zero_state_batch,
)
from .validation import ConfigError, ShapeMismatchError, check_finite

ENCODING_MODES = ("tanh_half_pi", "linear")


@dataclass
class EncodingSpec:
    """How raw features become RY angles.

    `tanh_half_pi` squashes each feature to (-pi/2, pi/2); `linear` multiplies
    by `linear_scale` (default 2.0, i.e. angle = 2x).
    """

    scale_mode: str = "tanh_half_pi"
    linear_scale: float = 2.0

    def __post_init__(self):
        if self.scale_mode not in ENCODING_MODES:
            raise ConfigError(f"scale_mode must be one of {ENCODING_MODES}, got {self.scale_mode!r}")

    def angles(self, features: np.ndarray) -> np.ndarray:
        if self.scale_mode == "tanh_half_pi":
            return (np.pi / 2.0) * np.tanh(features)
        return self.linear_scale * features

    def angle_derivative(self, features: np.ndarray) -> np.ndarray:
        """d(angle)/d(feature), elementwise."""
        if self.scale_mode == "tanh_half_pi":
            return (np.pi / 2.0) * (1.0 - np.tanh(features) ** 2)
        return np.full_like(np.asarray(features, dtype=np.float64), self.linear_scale)


@dataclass
class QvcParams:
    """Trainable angles: shape (depth, n_qubits, 3), ordered (RX, RY, RZ) per wire."""

    n_qubits: int
    depth: int
    angles: np.ndarray
    ring: bool = False  # close the CNOT chain into a ring

    def __post_init__(self):
        if self.n_qubits < 1 or self.depth < 1:
            raise ConfigError("n_qubits and depth must be positive")
        angles = np.asarray(self.angles, dtype=np.float64)
        expected = (self.depth, self.n_qubits, 3)
        if angles.shape != expected:
            raise ShapeMismatchError(f"angles: expected shape {expected}, got {angles.shape}")
        check_finite("angles", angles)
        self.angles = angles

    @property
    def count(self) -> int:
        return self.depth * self.n_qubits * 3

    @classmethod
    def random(cls, n_qubits: int, depth: int, spread: float = 0.01,
               rng: np.random.Generator | None = None, ring: bool = False) -> "QvcParams":
        rng = rng if rng is not None else np.random.default_rng()
        angles = rng.normal(0.0, spread, size=(depth, n_qubits, 3))
        return cls(n_qubits, depth, angles, ring=ring)

    @classmethod
    def zeros(cls, n_qubits: int, depth: int, ring: bool = False) -> "QvcParams":
        return cls(n_qubits, depth, np.zeros((depth, n_qubits, 3)), ring=ring)


def _check_features(features, n_qubits: int | None = None) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 1:
        raise ShapeMismatchError(f"features: expected 1-d vector, got shape {feats.shape}")
    if n_qubits is not None and feats.shape[0] != n_qubits:
        raise ShapeMismatchError(
            f"features: expected length {n_qubits} for {n_qubits}-qubit register, got {feats.shape[0]}"
        )
    return feats


def encode(features, spec: EncodingSpec, n_qubits: int | None = None) -> StateVector:
    """Per wire i: H then RY(angle_i) with angle_i from `spec`."""
    feats = _check_features(features, n_qubits)
    n = feats.shape[0]
    amps = zero_state_batch(1, n)
    enc = spec.angles(feats)
    for wire in range(n):
        apply_h_batch(amps, n, wire)
        apply_ry_batch(amps, n, wire, enc[wire])
    return StateVector(n, amps[0])


def variational_layer(state: StateVector, layer_angles, ring: bool = False) -> StateVector:
    """CNOT chain (i -> i+1), then RX/RY/RZ on each wire."""
    n = state.n_qubits
    angles = np.asarray(layer_angles, dtype=np.float64)
    if angles.shape != (n, 3):
        raise ShapeMismatchError(f"layer_angles: expected shape {(n, 3)}, got {angles.shape}")
    amps = state.amps.copy().reshape(1, -1)
    _entangle_and_rotate(amps, n, angles[np.newaxis], ring)
    return StateVector(n, amps[0])


def _su2_coefficients(layer_angles: np.ndarray):
    """Entries of RZ(g) @ RY(b) @ RX(a) per wire; layer_angles is (..., 3)."""
    a = layer_angles[..., 0] / 2.0
    b = layer_angles[..., 1] / 2.0
    g = layer_angles[..., 2] / 2.0
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    phase = np.cos(g) - 1j * np.sin(g)  # e^(-i*gamma/2)
    m00 = cb * ca + 1j * sb * sa
    m01 = -sb * ca - 1j * cb * sa
    m10 = sb * ca - 1j * cb * sa
    m11 = cb * ca - 1j * sb * sa
    return phase * m00, phase * m01, np.conj(phase) * m10, np.conj(phase) * m11


def _entangle_and_rotate(amps: np.ndarray, n: int, layer_angles: np.ndarray, ring: bool) -> None:
    """One variational layer on a batch; layer_angles has shape (batch, n, 3)."""
    apply_cnot_chain_batch(amps, n, ring)
    u00, u01, u10, u11 = _su2_coefficients(layer_angles)
    for wire in range(n):
        apply_su2_batch(amps, n, wire,
                        u00[:, wire], u01[:, wire], u10[:, wire], u11[:, wire])


def _simulate_angles(enc_angles: np.ndarray, thetas: np.ndarray, ring: bool) -> np.ndarray:
    """Run (batch,) circuits given encoding angles (B, n) and angles (B, depth, n, 3)."""
    n = enc_angles.shape[1]
    amps = encoded_product_state_batch(enc_angles)
    for layer in range(thetas.shape[1]):
        _entangle_and_rotate(amps, n, thetas[:, layer], ring)
    return expectation_z_all(amps, n)


def _check_batch(features, params: QvcParams, upstream=None):
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != params.n_qubits:
        raise ShapeMismatchError(
            f"features: expected shape (batch, {params.n_qubits}), got {feats.shape}"
        )
    if upstream is None:
        return feats, None
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != feats.shape:
        raise ShapeMismatchError(f"upstream: expected shape {feats.shape}, got {up.shape}")
    return feats, up


def forward_batch(features, params: QvcParams, spec: EncodingSpec) -> np.ndarray:
    """Expectations <Z_0..Z_{n-1}> for a batch of feature rows; shape (B, n)."""
    feats, _ = _check_batch(features, params)
    enc = spec.angles(feats)
    thetas = np.broadcast_to(params.angles, (feats.shape[0],) + params.angles.shape)
    return _simulate_angles(enc, thetas, params.ring)


def forward(features, params: QvcParams, spec: EncodingSpec) -> np.ndarray:
    """Single-sample circuit output z, each component in [-1, 1]."""
    feats = _check_features(features, params.n_qubits)
    return forward_batch(feats[np.newaxis], params, spec)[0]


def param_shift_gradient_batch(features, params: QvcParams, spec: EncodingSpec,
                               upstream) -> np.ndarray:
    """d(upstream . z)/d(angles) per sample via +/- pi/2 shifts; shape (B, depth, n, 3).

    All 2 * count shifted circuits for every sample run as one stacked
    simulation.
    """
    feats, up = _check_batch(features, params, upstream)
    batch, n = feats.shape
    k = params.count

    thetas = np.tile(params.angles.reshape(1, 1, 1, k), (batch, k, 2, 1))
    span = np.arange(k)
    thetas[:, span, 0, span] += np.pi / 2.0
    thetas[:, span, 1, span] -= np.pi / 2.0
    thetas = thetas.reshape(batch * k * 2, params.depth, n, 3)

    enc = np.repeat(spec.angles(feats), k * 2, axis=0)
    z = _simulate_angles(enc, thetas, params.ring).reshape(batch, k, 2, n)
    dz = 0.5 * (z[:, :, 0, :] - z[:, :, 1, :])  # (B, k, n)
    grad = np.einsum("bkn,bn->bk", dz, up)
    return grad.reshape(batch, params.depth, n, 3)


def param_shift_gradient(features, params: QvcParams, spec: EncodingSpec, upstream) -> np.ndarray:
    """Exact single-sample gradient, shaped like params.angles."""
    feats = _check_features(features, params.n_qubits)
    up = _check_features(upstream, params.n_qubits)
    return param_shift_gradient_batch(feats[np.newaxis], params, spec, up[np.newaxis])[0]


def finite_difference_gradient(features, params: QvcParams, spec: EncodingSpec, upstream,
                               h: float = 1e-4, scheme: str = "forward") -> np.ndarray:
    """Difference-quotient gradient of upstream . z; `forward` is one-sided.

    Kept as the approximate counterpart to `param_shift_gradient`; the
    `central` scheme is the usual test oracle.
    """
    if h <= 0:
        raise ConfigError(f"finite-difference step must be positive, got {h}")
    if scheme not in ("forward", "central"):
        raise ConfigError(f"scheme must be 'forward' or 'central', got {scheme!r}")
    feats = _check_features(features, params.n_qubits)
    up = _check_features(upstream, params.n_qubits)

    def loss(angles: np.ndarray) -> float:
        shifted = QvcParams(params.n_qubits, params.depth, angles, ring=params.ring)
        return float(forward(feats, shifted, spec) @ up)

    grad = np.zeros_like(params.angles)
    base = loss(params.angles) if scheme == "forward" else None
    it = np.nditer(params.angles, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        bumped = params.angles.copy()
        bumped[idx] += h
        if scheme == "forward":
            grad[idx] = (loss(bumped) - base) / h
        else:
            lowered = params.angles.copy()
            lowered[idx] -= h
            grad[idx] = (loss(bumped) - loss(lowered)) / (2.0 * h)
    return grad


def input_gradient_batch(features, params: QvcParams, spec: EncodingSpec, upstream) -> np.ndarray:
    """d(upstream . z)/d(features), chaining parameter shifts on the encoding
    angles with the encoding derivative; shape (B, n)."""
    feats, up = _check_batch(features, params, upstream)
    batch, n = feats.shape

    enc = spec.angles(feats)
    enc_shifted = np.tile(enc[:, np.newaxis, np.newaxis, :], (1, n, 2, 1))
    span = np.arange(n)
    enc_shifted[:, span, 0, span] += np.pi / 2.0
    enc_shifted[:, span, 1, span] -= np.pi / 2.0
    enc_shifted = enc_shifted.reshape(batch * n * 2, n)

    thetas = np.broadcast_to(params.angles, (batch * n * 2,) + params.angles.shape)
    z = _simulate_angles(enc_shifted, thetas, params.ring).reshape(batch, n, 2, n)
    dz = 0.5 * (z[:, :, 0, :] - z[:, :, 1, :])  # (B, enc wire, out wire)
    dangle = np.einsum("bij,bj->bi", dz, up)
    return dangle * spec.angle_derivative(feats)


def input_gradient(features, params: QvcParams, spec: EncodingSpec, upstream) -> np.ndarray:
    feats = _check_features(features, params.n_qubits)
    up = _check_features(upstream, params.n_qubits)
    return input_gradient_batch(feats[np.newaxis], params, spec, up[np.newaxis])[0]
