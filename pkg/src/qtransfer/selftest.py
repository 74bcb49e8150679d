"""Built-in sanity suite for installed copies.

Runs quick, deterministic checks of the load-bearing numerics: the gate
kernels against a dense matrix oracle, quantum and classical gradients
against finite differences, the attack contracts, and training determinism.
Everything here is self-contained so a broken install fails loudly without
needing the test tree.
"""
from __future__ import annotations

import numpy as np

from .adversarial import AttackConfig, fgsm
from .config import ExperimentConfig
from .data import synth_generate
from .nn.layers import Conv2D, Dense
from .nn.losses import cross_entropy, softmax, softmax_cross_entropy
from .qvc import EncodingSpec, QvcParams, finite_difference_gradient, param_shift_gradient
from .statevector import Gate, apply_gate, init_state
from .transfer import build, train

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)


def _rotation(kind: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if kind == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind == "RY":
        return np.array([[c, -s], [s, c]])
    return np.array([[c - 1j * s, 0], [0, c + 1j * s]])


def _dense_single(n: int, wire: int, u: np.ndarray) -> np.ndarray:
    # little-endian: wire 0 is the least significant kron factor
    op = np.eye(1, dtype=complex)
    for w in range(n):
        op = np.kron(u if w == wire else np.eye(2), op)
    return op


def _dense_cnot(n: int, control: int, target: int) -> np.ndarray:
    dim = 1 << n
    op = np.zeros((dim, dim), dtype=complex)
    for j in range(dim):
        flipped = j ^ (1 << target) if (j >> control) & 1 else j
        op[flipped, j] = 1.0
    return op


def _dense_gate(n: int, gate: Gate) -> np.ndarray:
    if gate.kind == "CNOT":
        return _dense_cnot(n, gate.control, gate.target)
    if gate.kind == "H":
        return _dense_single(n, gate.target, _H)
    return _dense_single(n, gate.target, _rotation(gate.kind, gate.angle))


def _random_gate(rng: np.random.Generator, n: int) -> Gate:
    kind = rng.choice(["H", "RX", "RY", "RZ", "CNOT"])
    if kind == "CNOT" and n > 1:
        control, target = rng.choice(n, size=2, replace=False)
        return Gate("CNOT", int(target), control=int(control))
    if kind == "CNOT":
        kind = "H"
    angle = float(rng.uniform(-np.pi, np.pi))
    return Gate(kind, int(rng.integers(n)), angle=None if kind == "H" else angle)


def check_oracle_equivalence() -> tuple[bool, str]:
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 4))
        state = init_state(n)
        dense = np.zeros(1 << n, dtype=complex)
        dense[0] = 1.0
        for _ in range(int(rng.integers(1, 11))):
            gate = _random_gate(rng, n)
            state = apply_gate(state, gate)
            dense = _dense_gate(n, gate) @ dense
        worst = max(worst, float(np.max(np.abs(state.amps - dense))))
    return worst <= 1e-10, f"max amplitude deviation {worst:.3e}"


def check_quantum_gradient() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    params = QvcParams.random(3, 2, spread=0.4, rng=rng)
    spec = EncodingSpec("tanh_half_pi")
    features = rng.normal(size=3)
    upstream = rng.normal(size=3)
    exact = param_shift_gradient(features, params, spec, upstream)
    approx = finite_difference_gradient(features, params, spec, upstream,
                                        h=1e-4, scheme="central")
    worst = float(np.max(np.abs(exact - approx)))
    return worst <= 1e-6, f"max gradient deviation {worst:.3e}"


def _fd_check(layer, x: np.ndarray, h: float = 1e-5) -> float:
    dout = np.ones_like(layer.forward(x, train=True))
    layer.backward(dout)
    worst = 0.0
    for name, param in layer.params.items():
        grad = layer.grads[name]
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = param[idx]
            param[idx] = orig + h
            up = float(layer.forward(x, train=True).sum())
            param[idx] = orig - h
            down = float(layer.forward(x, train=True).sum())
            param[idx] = orig
            fd = (up - down) / (2 * h)
            denom = max(abs(fd) + abs(grad[idx]), 1e-6)
            worst = max(worst, abs(fd - grad[idx]) / denom)
    return worst


def check_classical_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    worst = _fd_check(Dense(4, 3, rng=rng), rng.normal(size=(2, 4)))
    worst = max(worst, _fd_check(Conv2D(1, 2, 3, stride=1, padding=1, rng=rng),
                                 rng.normal(size=(2, 1, 5, 5))))
    ce = cross_entropy(np.array([0.5, 0.5]), 0)
    ce_ok = abs(ce - np.log(2)) <= 1e-12
    return worst <= 1e-4 and ce_ok, f"max rel gradient error {worst:.3e}"


def check_fgsm_contract() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    W = rng.normal(size=(4, 3))

    class Toy:
        def loss_input_gradient(self, x, y):
            probs = softmax(x @ W)
            d = probs.copy()
            d[np.arange(len(y)), y] -= 1.0
            return d @ W.T, 0.0

    toy = Toy()
    x = rng.uniform(0.2, 0.8, size=(16, 4))
    y = rng.integers(0, 3, size=16)
    same = fgsm(toy, x, y, AttackConfig(epsilon=0.0))
    if not np.array_equal(same, x):
        return False, "epsilon 0 must return the input unchanged"
    eps = 0.1
    x_adv = fgsm(toy, x, y, AttackConfig(epsilon=eps))
    if np.max(np.abs(x_adv - x)) > eps + 1e-12:
        return False, "perturbation exceeded the budget"
    grad, _ = toy.loss_input_gradient(x, y)
    for i in range(len(x)):
        if not grad[i].any():
            continue
        before = softmax_cross_entropy(x[i:i + 1] @ W, y[i:i + 1])[0]
        after = softmax_cross_entropy(x_adv[i:i + 1] @ W, y[i:i + 1])[0]
        if after < before - 1e-12:
            return False, f"loss decreased on sample {i}"
    return True, "identity, budget, and loss-increase contracts hold"


def check_training_determinism() -> tuple[bool, str]:
    histories = []
    for _ in range(2):
        config = ExperimentConfig.from_dict(dict(
            regime="quantum_no_tl", n_qubits=3, depth=2, epochs=2, batch_size=8,
            lr=0.05, seed=5,
            target_data={"kind": "synth", "classes": 2, "samples_per_class": 8,
                         "image_size": 8, "difficulty": 0.3}))
        data = synth_generate(config.target_data.to_synth_spec(seed=config.seed))
        histories.append(train(build(config), data, config))
    ok = histories[0] == histories[1]
    return ok, "two seeded runs produced identical metrics" if ok else "runs diverged"


CHECKS = (
    ("simulator-oracle-equivalence", check_oracle_equivalence),
    ("quantum-gradient-exactness", check_quantum_gradient),
    ("classical-gradient-checks", check_classical_gradients),
    ("fgsm-contract", check_fgsm_contract),
    ("training-determinism", check_training_determinism),
)


def run_selftest() -> list[tuple[str, bool, str]]:
    return [(name, *fn()) for name, fn in CHECKS]
