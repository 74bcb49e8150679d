"""End-to-end acceptance gates.

Fast exactness gates come first (gradient agreement, dense-oracle
equivalence, parameter accounting, layer-by-layer difference checks, attack
contracts, determinism, frozen-weight invariance).  The two trend gates at
the end train the full four-regime suite over five seeds at package
defaults and take several minutes; they share one module-scoped fixture so
the expensive runs happen once.

Every test prints a single PASS/FAIL line with the measured quantity so a
captured transcript documents the gate outcomes.
"""

import hashlib
import json
import time

import numpy as np
import pytest

from qtransfer.adversarial import AttackConfig, adversarial_train, evaluate_under_attack, fgsm
from qtransfer.cli import main
from qtransfer.config import DataSourceConfig, ExperimentConfig
from qtransfer.data import load_feature_csv, split, synth_generate
from qtransfer.nn import (
    BatchNorm, Conv2D, Dense, Flatten, MaxPool, ReLU, ResidualBlock, Tanh,
    cross_entropy, softmax,
)
from qtransfer.qvc import (
    EncodingSpec, QvcParams, finite_difference_gradient, param_shift_gradient,
)
from qtransfer.statevector import apply_gate, init_state
from qtransfer.transfer import build, evaluate, pretrain, train

from oracles import random_circuit, run_circuit_dense


def report(ok: bool, text: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'}: {text}")


# ---------------------------------------------------------------------------
# quantum gradient exactness


def test_quantum_gradient_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(41)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        depth = int(rng.integers(1, 4))
        params = QvcParams.random(n, depth, spread=0.7, rng=rng)
        spec = EncodingSpec("tanh_half_pi")
        feats = rng.normal(size=n)
        upstream = rng.normal(size=n)
        shift = param_shift_gradient(feats, params, spec, upstream)
        fd = finite_difference_gradient(feats, params, spec, upstream,
                                        h=1e-4, scheme="central")
        worst = max(worst, float(np.max(np.abs(shift - fd))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 10.0
    report(ok, f"parameter-shift vs central differences: max deviation "
               f"{worst:.2e} over 20 instances in {elapsed:.1f}s")
    assert worst <= 1e-6
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# simulator equivalence against the dense matrix oracle


def test_simulator_oracle_equivalence():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 4))
        gates = random_circuit(rng, n, int(rng.integers(1, 11)))
        state = init_state(n)
        for gate in gates:
            state = apply_gate(state, gate)
        dense = run_circuit_dense(gates, n)
        worst = max(worst, float(np.max(np.abs(state.amps - dense))))

    state = init_state(6)
    for gate in random_circuit(rng, 6, 1000):
        state = apply_gate(state, gate)
    drift = abs(float(np.sum(np.abs(state.amps) ** 2)) - 1.0)

    ok = worst <= 1e-10 and drift <= 1e-9
    report(ok, f"dense-oracle equivalence: max amplitude deviation {worst:.2e} "
               f"over 100 circuits; norm drift {drift:.2e} after 1000 gates")
    assert worst <= 1e-10
    assert drift <= 1e-9


# ---------------------------------------------------------------------------
# trainable quantum parameter count at the default width and depth


def test_parameter_accounting():
    config = ExperimentConfig()
    model = build(config.replaced(regime="quantum_no_tl"),
                  input_shape=(1, 16, 16), n_classes=2)
    count = sum(v.size for v in model.head.params.values())
    ok = config.n_qubits == 6 and config.depth == 6 and count == 108
    report(ok, f"quantum head exposes {count} trainable parameters at "
               f"{config.n_qubits} qubits, depth {config.depth}")
    assert count == 108


# ---------------------------------------------------------------------------
# finite-difference checks for every classical layer kind


def _fd_param_and_input_check(layer, x: np.ndarray, rng, train: bool) -> float:
    """Max relative error across all parameters and the input gradient."""
    upstream = rng.normal(size=layer.forward(x, train=train).shape)

    def loss(inp):
        return float(np.sum(layer.forward(inp, train=train) * upstream))

    layer.forward(x, train=train)
    dx = layer.backward(upstream)
    h, worst = 1e-5, 0.0

    flat_x = x.copy()
    it = np.nditer(flat_x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        plus, minus = flat_x.copy(), flat_x.copy()
        plus[i] += h
        minus[i] -= h
        fd = (loss(plus) - loss(minus)) / (2 * h)
        err = abs(fd - dx[i]) / max(1.0, abs(fd))
        worst = max(worst, err)
        it.iternext()

    for name, param in layer.params.items():
        layer.forward(x, train=train)
        layer.backward(upstream)
        grad = layer.grads[name]
        it = np.nditer(param, flags=["multi_index"])
        while not it.finished:
            i = it.multi_index
            keep = param[i]
            param[i] = keep + h
            up = loss(x)
            param[i] = keep - h
            down = loss(x)
            param[i] = keep
            fd = (up - down) / (2 * h)
            err = abs(fd - grad[i]) / max(1.0, abs(fd))
            worst = max(worst, err)
            it.iternext()
    return worst


def test_classical_gradient_checks():
    rng = np.random.default_rng(43)
    image = rng.normal(size=(2, 1, 6, 6))
    flat = rng.normal(size=(3, 8))
    cases = [
        ("Dense", Dense(8, 5, rng=rng), flat, False),
        ("ReLU", ReLU(), flat + 0.2, False),
        ("Tanh", Tanh(), flat, False),
        ("Flatten", Flatten(), image, False),
        ("Conv2D", Conv2D(1, 2, 3, stride=1, padding=1, rng=rng), image, False),
        ("MaxPool", MaxPool(2), image, False),
        ("BatchNorm", BatchNorm(1), image, True),
        ("ResidualBlock", ResidualBlock(1, rng=rng), image, True),
    ]
    worst_overall, failed = 0.0, []
    for name, layer, x, train_mode in cases:
        worst = _fd_param_and_input_check(layer, x.copy(), rng, train_mode)
        worst_overall = max(worst_overall, worst)
        if worst > 1e-4:
            failed.append(name)

    probs = softmax(np.array([0.3, 0.3]))
    ce_err = abs(cross_entropy(probs, 0) - np.log(2.0))

    ok = not failed and ce_err <= 1e-12
    report(ok, f"layer difference checks: worst relative error "
               f"{worst_overall:.2e} across {len(cases)} layer kinds; "
               f"balanced binary cross-entropy off ln2 by {ce_err:.1e}")
    assert not failed, f"layers over tolerance: {failed}"
    assert ce_err <= 1e-12


# ---------------------------------------------------------------------------
# attack construction contracts


class _LinearSoftmax:
    """Closed-form convex model: logits = x @ W + b."""

    def __init__(self, w: np.ndarray, b: np.ndarray) -> None:
        self.w, self.b = w, b

    def loss_input_gradient(self, x, y):
        logits = x @ self.w + self.b
        p = softmax(logits, axis=1)
        loss = cross_entropy(p, y)
        grad = p.copy()
        grad[np.arange(len(y)), y] -= 1.0
        return grad @ self.w.T, loss

    def forward(self, x, train=False):
        return x @ self.w + self.b


def _attack_problem():
    config = ExperimentConfig(
        regime="quantum_no_tl", n_qubits=3, depth=2, epochs=4, seed=5,
        target_data=DataSourceConfig(kind="synth", classes=2, samples_per_class=12,
                                     image_size=8, difficulty=0.3))
    data = synth_generate(config.target_data.to_synth_spec(seed=5))
    train_set, test_set = split(data, 0.5, seed=5)
    model = build(config, input_shape=train_set.x.shape[1:], n_classes=2)
    train(model, train_set, config)
    return model, test_set


def test_fgsm_contract():
    model, test_set = _attack_problem()
    x, y = test_set.x, test_set.y

    zero = fgsm(model, x, y, AttackConfig(epsilon=0.0))
    identical = np.array_equal(zero, x)
    clean, _ = evaluate(model, test_set)
    attacked_zero = evaluate_under_attack(model, test_set, AttackConfig(epsilon=0.0))

    adv = fgsm(model, x, y, AttackConfig(epsilon=0.17))
    budget = float(np.max(np.abs(adv - x)))
    in_bounds = adv.min() >= 0.0 and adv.max() <= 1.0

    rng = np.random.default_rng(44)
    toy = _LinearSoftmax(rng.normal(size=(6, 3)), rng.normal(size=3))
    tx = rng.uniform(0.1, 0.9, size=(40, 6))
    ty = rng.integers(0, 3, size=40)
    grads, _ = toy.loss_input_gradient(tx, ty)
    tadv = fgsm(toy, tx, ty, AttackConfig(epsilon=0.05))
    increased = True
    for i in range(len(ty)):
        if not np.any(grads[i]):
            continue
        before = cross_entropy(softmax(toy.forward(tx[i:i + 1]), axis=1), ty[i:i + 1])
        after = cross_entropy(softmax(toy.forward(tadv[i:i + 1]), axis=1), ty[i:i + 1])
        if after < before:
            increased = False

    ok = (identical and attacked_zero == clean and budget <= 0.17 + 1e-12
          and in_bounds and increased)
    report(ok, f"attack contract: zero-budget identity {identical}, "
               f"zero-budget accuracy drift {abs(attacked_zero - clean):.1e}, "
               f"max perturbation {budget:.4f} vs budget 0.17, "
               f"convex loss never decreased: {increased}")
    assert identical
    assert attacked_zero == clean
    assert budget <= 0.17 + 1e-12
    assert in_bounds
    assert increased


# ---------------------------------------------------------------------------
# run-to-run determinism of the metrics file


def test_metrics_determinism(tmp_path):
    config = {
        "regime": "quantum_no_tl", "n_qubits": 3, "depth": 2, "epochs": 3,
        "seed": 17,
        "target_data": {"kind": "synth", "classes": 2, "samples_per_class": 10,
                        "image_size": 8, "difficulty": 0.3},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main(["train", "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        outs.append((out / "metrics.csv").read_bytes())
    ok = outs[0] == outs[1]
    report(ok, f"identical config and seed give bit-identical metrics.csv "
               f"({len(outs[0])} bytes)")
    assert ok


# ---------------------------------------------------------------------------
# frozen extractor stays bit-identical through fine-tuning


def test_frozen_extractor_invariance(tmp_path):
    config = ExperimentConfig(
        regime="quantum_tl", n_qubits=3, depth=2, epochs=4, seed=6,
        pretrain_epochs=6,
        source_data=DataSourceConfig(kind="synth", classes=4, samples_per_class=20,
                                     image_size=8, difficulty=0.2),
        target_data=DataSourceConfig(kind="synth", classes=2, samples_per_class=14,
                                     image_size=8, difficulty=0.4, style_offset=2))
    source = synth_generate(config.source_data.to_synth_spec(seed=6))
    source_train, _ = split(source, 0.8, seed=6)
    ckpt = tmp_path / "extractor.npz"
    pretrain(source_train, config, ckpt)

    model = build(config, str(ckpt))
    before = {f"{p}.{k}": v.copy()
              for p, layer in model.named_layers() if layer.frozen
              for k, v in layer.params.items()}
    assert before, "TL build must freeze the extractor"

    target = synth_generate(config.target_data.to_synth_spec(seed=6))
    target_train, _ = split(target, 0.7, seed=6)
    train(model, target_train, config)

    frozen_map = {f"{p}.{k}": v
                  for p, layer in model.named_layers() if layer.frozen
                  for k, v in layer.params.items()}
    same = set(before) == set(frozen_map) and all(
        np.array_equal(before[k], frozen_map[k]) for k in before)
    report(same, f"{len(before)} frozen extractor arrays bit-identical "
                 f"after fine-tuning")
    assert same


# ---------------------------------------------------------------------------
# trend gates: the expensive five-seed suite at package defaults

REGIMES = ("quantum_tl", "quantum_no_tl", "classical_tl", "classical_no_tl")
SEEDS = tuple(range(5))


@pytest.fixture(scope="module")
def trend_suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("trend")
    base = ExperimentConfig()
    accs = {regime: [] for regime in REGIMES}
    qtl = []
    t0 = time.perf_counter()
    for seed in SEEDS:
        cfg = base.replaced(seed=seed)
        source = synth_generate(cfg.source_data.to_synth_spec(seed=seed))
        source_train, _ = split(source, cfg.source_data.train_fraction, seed=seed)
        ckpt = root / f"extractor-{seed}.npz"
        pretrain(source_train, cfg, ckpt)

        target = synth_generate(cfg.target_data.to_synth_spec(seed=seed))
        target_train, target_test = split(target, cfg.target_data.train_fraction,
                                          seed=seed)
        for regime in REGIMES:
            run_cfg = cfg.replaced(regime=regime)
            model = build(run_cfg, str(ckpt) if run_cfg.is_tl else None)
            train(model, target_train, run_cfg)
            acc, _ = evaluate(model, target_test)
            accs[regime].append(acc)
            if regime == "quantum_tl":
                qtl.append((model, target_train, target_test, run_cfg, ckpt))
    wall = time.perf_counter() - t0
    return {"accs": accs, "qtl": qtl, "wall": wall}


def test_transfer_trend_margins(trend_suite):
    means = {r: float(np.mean(trend_suite["accs"][r])) for r in REGIMES}
    q_margin = means["quantum_tl"] - means["quantum_no_tl"]
    c_margin = means["classical_tl"] - means["classical_no_tl"]
    wall = trend_suite["wall"]
    ok = q_margin >= 0.05 and c_margin >= 0.05 and wall < 900.0
    report(ok, f"five-seed transfer margins: quantum {q_margin * 100:+.1f} pts "
               f"({means['quantum_tl']:.3f} vs {means['quantum_no_tl']:.3f}), "
               f"classical {c_margin * 100:+.1f} pts "
               f"({means['classical_tl']:.3f} vs {means['classical_no_tl']:.3f}); "
               f"suite wall time {wall:.0f}s")
    assert q_margin >= 0.05
    assert c_margin >= 0.05
    assert wall < 900.0


def test_adversarial_robustness_trend(trend_suite):
    budgets = (0.1, 0.2, 0.3)
    clean, at_clean, at_attacked = [], [], []
    attacked = {eps: [] for eps in budgets}
    for model, target_train, target_test, run_cfg, ckpt in trend_suite["qtl"]:
        c, _ = evaluate(model, target_test)
        clean.append(c)
        for eps in budgets:
            attacked[eps].append(evaluate_under_attack(model, target_test,
                                                       AttackConfig(epsilon=eps)))
        robust = build(run_cfg, str(ckpt))
        adversarial_train(robust, target_train, run_cfg,
                          AttackConfig(epsilon=0.1, mix_ratio=run_cfg.mix_ratio))
        ac, _ = evaluate(robust, target_test)
        at_clean.append(ac)
        at_attacked.append(evaluate_under_attack(robust, target_test,
                                                 AttackConfig(epsilon=0.1)))
    mean_clean = float(np.mean(clean))
    mean_attacked = {eps: float(np.mean(attacked[eps])) for eps in budgets}
    drop = mean_clean - mean_attacked[0.1]
    recovery = float(np.mean(at_attacked)) - mean_attacked[0.1]
    # hardening must not cost much clean accuracy; the attack must hurt at
    # every budget (single-step FGSM is not monotone in the budget, so only
    # the drop below clean is asserted per budget)
    clean_cost = mean_clean - float(np.mean(at_clean))
    ok = (drop >= 0.10 and recovery >= 0.10 and clean_cost <= 0.10
          and all(mean_attacked[eps] <= mean_clean for eps in budgets))
    report(ok, f"five-seed robustness trend: attack at budget 0.1 drops "
               f"accuracy {drop * 100:.1f} pts ({mean_clean:.3f} -> "
               f"{mean_attacked[0.1]:.3f}; budgets 0.2/0.3 -> "
               f"{mean_attacked[0.2]:.3f}/{mean_attacked[0.3]:.3f}); "
               f"adversarial training recovers {recovery * 100:+.1f} pts "
               f"(to {float(np.mean(at_attacked)):.3f}) at a clean cost of "
               f"{clean_cost * 100:+.1f} pts")
    assert drop >= 0.10
    assert recovery >= 0.10
    for eps in budgets:
        assert mean_attacked[eps] <= mean_clean
    assert abs(clean_cost) <= 0.10


# ---------------------------------------------------------------------------
# exporter contract (secondary component; skipped when it is not installed)


def test_feature_export_contract(tmp_path):
    exporter = pytest.importorskip("feature_exporter")
    PIL_Image = pytest.importorskip("PIL.Image")

    rng = np.random.default_rng(45)
    image_root = tmp_path / "images"
    for label in ("circles", "squares"):
        folder = image_root / label
        folder.mkdir(parents=True)
        for i in range(2):
            pixels = rng.integers(0, 255, size=(32, 32, 3), dtype=np.uint8)
            PIL_Image.fromarray(pixels).save(folder / f"img{i}.png")

    out_csv = tmp_path / "features.csv"
    manifest = exporter.export(image_root, out_csv, pretrained=False, seed=3)
    header = out_csv.read_text().splitlines()[0].split(",")
    dataset = load_feature_csv(out_csv)

    second_csv = tmp_path / "features2.csv"
    manifest2 = exporter.export(image_root, second_csv, pretrained=False, seed=3)
    checksums = (hashlib.sha256(out_csv.read_bytes()).hexdigest(),
                 hashlib.sha256(second_csv.read_bytes()).hexdigest())

    ok = (len(header) == 513 and dataset.feature_width == 512
          and len(dataset) == 4 and checksums[0] == checksums[1]
          and manifest.checksum == manifest2.checksum)
    report(ok, f"feature export: {len(header)} columns, {len(dataset)} rows "
               f"ingested cleanly, re-export checksum stable "
               f"({checksums[0][:12]}...)")
    assert len(header) == 513
    assert dataset.feature_width == 512
    assert len(dataset) == 4
    assert checksums[0] == checksums[1]
    assert manifest.checksum == manifest2.checksum
