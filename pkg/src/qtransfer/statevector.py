"""Exact n-qubit statevector simulation for the gate set {H, RX, RY, RZ, CNOT}.

Conventions, fixed so test vectors are unambiguous:

- Little-endian bit order: qubit ``i`` addresses bit ``i`` of the basis index,
  so the two-qubit state with qubit 0 set is basis index 1.
- Rotations follow exp(-i*angle*P/2); RY(pi) maps |0> to |1>.

The module exposes a value-in/value-out single-state API (`init_state`,
`apply_gate`, `expectation_z`) plus in-place kernels that operate on stacks
of statevectors with shape ``(batch, 2**n_qubits)``. The variational-circuit
code evaluates hundreds of parameter-shifted circuits per gradient through
the batch kernels; both paths run the same arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .validation import ConfigError

MAX_QUBITS = 12

ROTATION_KINDS = ("RX", "RY", "RZ")
GATE_KINDS = ("H",) + ROTATION_KINDS + ("CNOT",)

_SQRT2_INV = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class StateVector:
    """Pure state of an ``n_qubits`` register: ``2**n_qubits`` complex amplitudes."""

    n_qubits: int
    amps: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ConfigError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        amps = np.asarray(self.amps, dtype=np.complex128)
        if amps.shape != (2**self.n_qubits,):
            raise ConfigError(
                f"amplitude vector must have length {2**self.n_qubits}, got shape {amps.shape}"
            )
        object.__setattr__(self, "amps", amps)

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2))


@dataclass(frozen=True)
class Gate:
    """One gate application: kind, target wire, optional control wire and angle."""

    kind: str
    target: int
    control: int | None = None
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ConfigError(f"unknown gate kind {self.kind!r}")
        if self.kind in ROTATION_KINDS and self.angle is None:
            raise ConfigError(f"{self.kind} requires an angle")
        if self.kind == "CNOT":
            if self.control is None:
                raise ConfigError("CNOT requires a control wire")
            if self.control == self.target:
                raise ConfigError("CNOT control and target must differ")
        elif self.control is not None:
            raise ConfigError(f"{self.kind} takes no control wire")

    @classmethod
    def h(cls, target: int) -> "Gate":
        return cls("H", target)

    @classmethod
    def rx(cls, target: int, angle: float) -> "Gate":
        return cls("RX", target, angle=angle)

    @classmethod
    def ry(cls, target: int, angle: float) -> "Gate":
        return cls("RY", target, angle=angle)

    @classmethod
    def rz(cls, target: int, angle: float) -> "Gate":
        return cls("RZ", target, angle=angle)

    @classmethod
    def cnot(cls, control: int, target: int) -> "Gate":
        return cls("CNOT", target, control=control)

    def inverse(self) -> "Gate":
        """H and CNOT are self-inverse; rotations negate their angle."""
        if self.kind in ROTATION_KINDS:
            return Gate(self.kind, self.target, angle=-self.angle)
        return self


@dataclass(frozen=True)
class Observable:
    """Pauli-Z on a single wire."""

    wire: int


def init_state(n_qubits: int) -> StateVector:
    """All-zeros computational basis state |0...0>."""
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigError(f"n_qubits must be an integer in [1, {MAX_QUBITS}], got {n_qubits!r}")
    amps = np.zeros(2**n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(int(n_qubits), amps)


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    """Return ``state`` transformed by the gate's unitary."""
    n = state.n_qubits
    _check_wire(gate.target, n)
    if gate.control is not None:
        _check_wire(gate.control, n)
    amps = state.amps.copy().reshape(1, -1)
    apply_gate_batch(amps, n, gate)
    return StateVector(n, amps.reshape(-1))


def expectation_z(state: StateVector, obs: Observable | int) -> float:
    """<Z> on one wire: sum over basis states of (+/-1) * |amplitude|**2."""
    wire = obs.wire if isinstance(obs, Observable) else int(obs)
    _check_wire(wire, state.n_qubits)
    value = expectation_z_batch(state.amps.reshape(1, -1), state.n_qubits, wire)
    return float(value[0])


def _check_wire(wire: int, n_qubits: int) -> None:
    if not 0 <= wire < n_qubits:
        raise ConfigError(f"wire {wire} out of range for {n_qubits} qubits")


# ---------------------------------------------------------------------------
# Batch kernels. All mutate `amps` (shape (batch, 2**n_qubits)) in place.
# Rotation angles may be scalars or per-row arrays of shape (batch,).
# ---------------------------------------------------------------------------


def zero_state_batch(batch: int, n_qubits: int) -> np.ndarray:
    amps = np.zeros((batch, 2**n_qubits), dtype=np.complex128)
    amps[:, 0] = 1.0
    return amps


def _pair_view(amps: np.ndarray, n_qubits: int, wire: int):
    """Split the basis axis into (high bits, target bit, low bits) sub-axes."""
    batch = amps.shape[0]
    low = 1 << wire
    high = 1 << (n_qubits - wire - 1)
    view = amps.reshape(batch, high, 2, low)
    return view[:, :, 0, :], view[:, :, 1, :]


def _per_row(x, amps: np.ndarray):
    """Reshape a (batch,) coefficient for broadcasting against pair views."""
    if np.ndim(x) == 0:
        return x
    return np.asarray(x).reshape(amps.shape[0], 1, 1)


def apply_h_batch(amps: np.ndarray, n_qubits: int, wire: int) -> None:
    a0, a1 = _pair_view(amps, n_qubits, wire)
    new0 = (a0 + a1) * _SQRT2_INV
    new1 = (a0 - a1) * _SQRT2_INV
    a0[:] = new0
    a1[:] = new1


def apply_rx_batch(amps: np.ndarray, n_qubits: int, wire: int, angle) -> None:
    c = _per_row(np.cos(np.asarray(angle) / 2.0), amps)
    s = _per_row(np.sin(np.asarray(angle) / 2.0), amps)
    a0, a1 = _pair_view(amps, n_qubits, wire)
    new0 = c * a0 - 1j * s * a1
    new1 = -1j * s * a0 + c * a1
    a0[:] = new0
    a1[:] = new1


def apply_ry_batch(amps: np.ndarray, n_qubits: int, wire: int, angle) -> None:
    c = _per_row(np.cos(np.asarray(angle) / 2.0), amps)
    s = _per_row(np.sin(np.asarray(angle) / 2.0), amps)
    a0, a1 = _pair_view(amps, n_qubits, wire)
    new0 = c * a0 - s * a1
    new1 = s * a0 + c * a1
    a0[:] = new0
    a1[:] = new1


def apply_rz_batch(amps: np.ndarray, n_qubits: int, wire: int, angle) -> None:
    half = np.asarray(angle) / 2.0
    phase = np.cos(half) - 1j * np.sin(half)
    a0, a1 = _pair_view(amps, n_qubits, wire)
    a0 *= _per_row(phase, amps)
    a1 *= _per_row(np.conj(phase), amps)


@lru_cache(maxsize=None)
def _cnot_permutation(n_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << n_qubits)
    return idx ^ (((idx >> control) & 1) << target)


def apply_cnot_batch(amps: np.ndarray, n_qubits: int, control: int, target: int) -> None:
    # CNOT permutes basis states and is its own inverse, so a gather suffices.
    perm = _cnot_permutation(n_qubits, control, target)
    amps[:] = amps[:, perm]


@lru_cache(maxsize=None)
def _chain_permutation(n_qubits: int, ring: bool) -> np.ndarray:
    """Composed permutation of CNOT(0,1) ... CNOT(n-2,n-1) [+ CNOT(n-1,0)]."""
    total = np.arange(1 << n_qubits)
    for control in range(n_qubits - 1):
        total = total[_cnot_permutation(n_qubits, control, control + 1)]
    if ring and n_qubits > 1:
        total = total[_cnot_permutation(n_qubits, n_qubits - 1, 0)]
    return total


def apply_cnot_chain_batch(amps: np.ndarray, n_qubits: int, ring: bool = False) -> None:
    """The whole entangling chain as one gather."""
    if n_qubits > 1:
        amps[:] = amps[:, _chain_permutation(n_qubits, ring)]


def apply_su2_batch(amps: np.ndarray, n_qubits: int, wire: int,
                    u00, u01, u10, u11) -> None:
    """Apply per-row 2x2 unitaries [[u00, u01], [u10, u11]] to one wire."""
    a0, a1 = _pair_view(amps, n_qubits, wire)
    c00, c01 = _per_row(u00, amps), _per_row(u01, amps)
    c10, c11 = _per_row(u10, amps), _per_row(u11, amps)
    new0 = c00 * a0 + c01 * a1
    new1 = c10 * a0 + c11 * a1
    a0[:] = new0
    a1[:] = new1


def encoded_product_state_batch(enc_angles: np.ndarray) -> np.ndarray:
    """States after per-wire H then RY(angle), built as a product state.

    Equivalent to applying the gates one by one but in O(2^n) work per row.
    """
    enc = np.asarray(enc_angles, dtype=np.float64)
    batch, n = enc.shape
    c, s = np.cos(enc / 2.0), np.sin(enc / 2.0)
    v0 = (c - s) * _SQRT2_INV  # amplitude on |0> per wire
    v1 = (c + s) * _SQRT2_INV
    amps = np.ones((batch, 1), dtype=np.complex128)
    for i in range(n):
        stacked = np.empty((batch, 2, amps.shape[1]), dtype=np.complex128)
        stacked[:, 0, :] = amps * v0[:, i:i + 1]
        stacked[:, 1, :] = amps * v1[:, i:i + 1]
        amps = stacked.reshape(batch, -1)
    return amps


def apply_gate_batch(amps: np.ndarray, n_qubits: int, gate: Gate) -> None:
    if gate.kind == "H":
        apply_h_batch(amps, n_qubits, gate.target)
    elif gate.kind == "RX":
        apply_rx_batch(amps, n_qubits, gate.target, gate.angle)
    elif gate.kind == "RY":
        apply_ry_batch(amps, n_qubits, gate.target, gate.angle)
    elif gate.kind == "RZ":
        apply_rz_batch(amps, n_qubits, gate.target, gate.angle)
    else:
        apply_cnot_batch(amps, n_qubits, gate.control, gate.target)


@lru_cache(maxsize=None)
def _z_signs(n_qubits: int, wire: int) -> np.ndarray:
    idx = np.arange(1 << n_qubits)
    return 1.0 - 2.0 * ((idx >> wire) & 1).astype(np.float64)


def expectation_z_batch(amps: np.ndarray, n_qubits: int, wire: int) -> np.ndarray:
    """Per-row <Z_wire> for a stack of states; shape (batch,)."""
    probs = np.abs(amps) ** 2
    return probs @ _z_signs(n_qubits, wire)


def expectation_z_all(amps: np.ndarray, n_qubits: int) -> np.ndarray:
    """Per-row <Z> on every wire at once; shape (batch, n_qubits)."""
    probs = np.abs(amps) ** 2
    signs = np.stack([_z_signs(n_qubits, w) for w in range(n_qubits)], axis=1)
    return probs @ signs
