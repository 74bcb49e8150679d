"""Model assembly and training for the four regimes.

A model is extractor -> reduction -> head -> readout.  The extractor is a
small conv stack for image inputs (absent for pre-extracted feature vectors),
the reduction is a Dense layer mapping to the head width, and the head is
either the variational quantum circuit or a Dense+tanh block of the same
width.  Transfer regimes load a pretrained extractor checkpoint and freeze
it; no-transfer regimes train the identical topology from random init.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .config import ExperimentConfig
from .data import Dataset
from .nn.layers import (
    BatchNorm,
    Conv2D,
    Dense,
    Flatten,
    Layer,
    MaxPool,
    ReLU,
    ResidualBlock,
    Tanh,
)
from .nn.losses import softmax, softmax_cross_entropy
from .nn.optim import make_optimizer, scheduled_lr
from .qvc import (
    EncodingSpec,
    QvcParams,
    forward_batch,
    input_gradient_batch,
    param_shift_gradient_batch,
)
from .validation import ConfigError, UsageError, shape_mismatch

CHECKPOINT_FORMAT = 1
REDUCED_WIDTH = 32  # extractor output features, reduced to head width by `reduction`


class CheckpointError(RuntimeError):
    """Checkpoint missing, malformed, or built for a different architecture."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


class QuantumHead:
    """Variational-circuit head with the same duck-typed surface as a Layer."""

    def __init__(self, qvc_params: QvcParams, spec: EncodingSpec) -> None:
        self.qvc_params = qvc_params
        self.spec = spec
        self.frozen = False
        self.params = {"angles": qvc_params.angles}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    @property
    def width(self) -> int:
        return self.qvc_params.n_qubits

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.width:
            raise shape_mismatch("QuantumHead input", ("batch", self.width), x.shape)
        self._cache = x
        return forward_batch(x, self.qvc_params, self.spec)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise UsageError("QuantumHead.backward called before forward")
        x, self._cache = self._cache, None
        dout = np.asarray(dout, dtype=np.float64)
        per_sample = param_shift_gradient_batch(x, self.qvc_params, self.spec, dout)
        self.grads = {"angles": per_sample.sum(axis=0)}
        return input_gradient_batch(x, self.qvc_params, self.spec, dout)


class ClassicalHead:
    """Dense + tanh head matching the quantum head's width."""

    def __init__(self, width: int, rng: np.random.Generator) -> None:
        self.dense = Dense(width, width, rng=rng)
        self.tanh = Tanh()
        self.frozen = False
        self.buffers: dict[str, np.ndarray] = {}

    @property
    def width(self) -> int:
        return self.dense.n_out

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {f"dense.{k}": v for k, v in self.dense.params.items()}

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {f"dense.{k}": v for k, v in self.dense.grads.items()}

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        self.dense.set_frozen(frozen)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return self.tanh.forward(self.dense.forward(x, train), train)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return self.dense.backward(self.tanh.backward(dout))


def micro_extractor(image_size: int, rng: np.random.Generator) -> list[Layer]:
    """Conv(3x3, 8ch) -> BN -> ReLU -> MaxPool(2) -> ResidualBlock(8ch) -> Flatten -> Dense."""
    if image_size < 8 or image_size % 2:
        raise ConfigError(f"image_size must be even and at least 8, got {image_size}")
    flat = 8 * (image_size // 2) ** 2
    return [
        Conv2D(1, 8, 3, stride=1, padding=1, rng=rng),
        BatchNorm(8),
        ReLU(),
        MaxPool(2),
        ResidualBlock(8, rng=rng),
        Flatten(),
        Dense(flat, REDUCED_WIDTH, rng=rng),
    ]


def architecture_fingerprint(extractor: list[Layer]) -> str:
    """Stable hash of layer kinds and parameter/buffer shapes."""
    desc = []
    for layer in extractor:
        shapes = {k: list(v.shape) for k, v in sorted(layer.params.items())}
        shapes.update({k: list(v.shape) for k, v in sorted(layer.buffers.items())})
        desc.append([type(layer).__name__, shapes])
    blob = json.dumps(desc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class Model:
    """Composed pipeline; `extractor` may be empty for feature-vector inputs."""

    def __init__(self, extractor: list[Layer], reduction: Dense | None,
                 head, readout: Dense, regime: str, input_kind: str) -> None:
        self.extractor = extractor
        self.reduction = reduction
        self.head = head
        self.readout = readout
        self.regime = regime
        self.input_kind = input_kind

    def named_layers(self):
        for i, layer in enumerate(self.extractor):
            yield f"extractor.{i}", layer
        if self.reduction is not None:
            yield "reduction", self.reduction
        if self.head is not None:
            yield "head", self.head
        yield "readout", self.readout

    @property
    def n_classes(self) -> int:
        return self.readout.n_out

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for layer in self.extractor:
            h = layer.forward(h, train)
        if self.reduction is not None:
            h = self.reduction.forward(h, train)
        if self.head is not None:
            h = self.head.forward(h, train)
        return self.readout.forward(h, train)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = self.readout.backward(dlogits)
        if self.head is not None:
            d = self.head.backward(d)
        if self.reduction is not None:
            d = self.reduction.backward(d)
        for layer in reversed(self.extractor):
            d = layer.backward(d)
        return d

    def trainable_items(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        items = []
        for prefix, layer in self.named_layers():
            if layer.frozen:
                continue
            grads = layer.grads
            for name, param in layer.params.items():
                if name not in grads:
                    raise UsageError(f"no gradient for {prefix}.{name}; run backward first")
                items.append((f"{prefix}.{name}", param, grads[name]))
        return items

    def loss_input_gradient(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
        """Gradient of the mean cross-entropy with respect to the raw input."""
        logits = self.forward(x, train=False)
        loss, _, dlogits = softmax_cross_entropy(logits, y)
        # undo the batch-mean scaling so each sample carries its own gradient
        return self.backward(dlogits * x.shape[0]), loss

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        chunks = []
        for start in range(0, x.shape[0], batch_size):
            logits = self.forward(x[start:start + batch_size], train=False)
            chunks.append(softmax(logits))
        return np.concatenate(chunks, axis=0)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)


def freeze(model: Model) -> Model:
    """Freeze every extractor layer; reduction, head, and readout stay trainable."""
    for layer in model.extractor:
        layer.set_frozen(True)
    if model.reduction is not None:
        model.reduction.set_frozen(False)
    if model.head is not None:
        model.head.set_frozen(False)
    model.readout.set_frozen(False)
    return model


def _assemble(config: ExperimentConfig, input_kind: str,
              input_shape: tuple[int, ...], n_classes: int) -> Model:
    """Topology only; checkpoint loading and freezing happen in build()."""
    rng = config.rng("init")
    # the reduction feeds a saturating encoder (tanh in both head kinds), so
    # He init would start most angles pinned near +-pi/2 and stall the head;
    # 1/n_in keeps the initial angles in the linear range
    if input_kind == "image":
        extractor = micro_extractor(int(input_shape[-1]), rng)
        reduction = Dense(REDUCED_WIDTH, config.n_qubits, rng=rng,
                          weight_scale=1.0 / REDUCED_WIDTH)
    else:
        n_in = int(input_shape[-1])
        extractor = []
        reduction = Dense(n_in, config.n_qubits, rng=rng, weight_scale=1.0 / n_in)

    if config.is_quantum:
        qvc_params = QvcParams.random(config.n_qubits, config.depth,
                                      spread=config.init_spread, rng=rng, ring=config.ring)
        head = QuantumHead(qvc_params, EncodingSpec(config.encoding, config.linear_scale))
    else:
        head = ClassicalHead(config.n_qubits, rng)
    readout = Dense(config.n_qubits, n_classes, rng=rng)
    return Model(extractor, reduction, head, readout, config.regime, input_kind)


def build(config: ExperimentConfig, checkpoint_path=None, *,
          input_shape: tuple[int, ...] | None = None,
          n_classes: int | None = None,
          input_kind: str | None = None) -> Model:
    """Assemble a model for the configured regime.

    TL regimes with image inputs require ``checkpoint_path``; feature-vector
    inputs bypass the extractor entirely, so no checkpoint applies.
    ``input_kind`` overrides the kind implied by the configured data source.
    """
    if input_kind is None:
        input_kind = "feature_vector" if config.target_data.kind == "csv" else "image"
    if input_kind not in ("image", "feature_vector"):
        raise ConfigError(f"unknown input kind {input_kind!r}")
    if n_classes is None:
        if config.target_data.kind != "synth":
            raise ConfigError("n_classes must be given for file-based datasets")
        n_classes = config.target_data.classes

    if input_kind == "image":
        size = input_shape[-1] if input_shape else config.target_data.image_size
        input_shape = (1, size, size)
    elif input_shape is None:
        raise ConfigError("input_shape must be given for feature-vector datasets")

    model = _assemble(config, input_kind, tuple(input_shape), n_classes)

    needs_checkpoint = config.is_tl and input_kind == "image"
    if needs_checkpoint:
        if checkpoint_path is None:
            raise CheckpointError(f"regime {config.regime} requires a pretrained checkpoint")
        load_extractor_weights(model.extractor, checkpoint_path)
        freeze(model)
    elif checkpoint_path is not None and not config.is_tl:
        raise ConfigError(f"regime {config.regime} does not take a checkpoint")

    if not config.is_tl and config.fixed_readout:
        model.readout.set_frozen(True)
    return model


def save_checkpoint(path, extractor: list[Layer], *, seed: int, regime: str) -> None:
    arrays = {}
    for i, layer in enumerate(extractor):
        for name, arr in layer.params.items():
            arrays[f"{i}.{name}"] = arr
        for name, arr in layer.buffers.items():
            arrays[f"{i}.{name}"] = arr
    meta = {
        "format": CHECKPOINT_FORMAT,
        "fingerprint": architecture_fingerprint(extractor),
        "seed": int(seed),
        "regime": regime,
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as bundle:
            if "__meta__" not in bundle:
                raise CheckpointError(f"{path}: missing metadata record")
            meta = json.loads(str(bundle["__meta__"]))
            arrays = {k: bundle[k] for k in bundle.files if k != "__meta__"}
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from None
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')}")
    return meta, arrays


def load_extractor_weights(extractor: list[Layer], path) -> dict:
    meta, arrays = load_checkpoint(path)
    expected = architecture_fingerprint(extractor)
    if meta["fingerprint"] != expected:
        raise CheckpointError(
            f"{path}: architecture fingerprint {meta['fingerprint']} does not match "
            f"this model's {expected}")
    for i, layer in enumerate(extractor):
        for name, arr in list(layer.params.items()) + list(layer.buffers.items()):
            key = f"{i}.{name}"
            if key not in arrays:
                raise CheckpointError(f"{path}: missing weight {key}")
            if arrays[key].shape != arr.shape:
                raise CheckpointError(
                    f"{path}: weight {key} has shape {arrays[key].shape}, expected {arr.shape}")
            arr[...] = arrays[key]
    return meta


def save_model(path, model: Model, config: ExperimentConfig,
               input_shape: tuple[int, ...], *, adversarial: bool = False,
               train_epsilon: float | None = None) -> None:
    """Persist the whole pipeline (weights, buffers, frozen flags, config)."""
    arrays = {}
    frozen = {}
    for prefix, layer in model.named_layers():
        frozen[prefix] = bool(layer.frozen)
        for name, arr in list(layer.params.items()) + list(layer.buffers.items()):
            arrays[f"{prefix}.{name}"] = arr
    meta = {
        "format": CHECKPOINT_FORMAT,
        "kind": "model",
        "regime": model.regime,
        "input_kind": model.input_kind,
        "input_shape": [int(d) for d in input_shape],
        "n_classes": model.n_classes,
        "config": json.loads(config.to_json()),
        "frozen": frozen,
        "adversarial": bool(adversarial),
        "train_epsilon": train_epsilon,
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_model(path) -> tuple[Model, ExperimentConfig, dict]:
    """Rebuild a model saved by save_model, bit-identical weights included."""
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "model":
        raise CheckpointError(f"{path}: expected a full model checkpoint")
    config = ExperimentConfig.from_dict(meta["config"])
    model = _assemble(config, meta["input_kind"], tuple(meta["input_shape"]),
                      int(meta["n_classes"]))
    for prefix, layer in model.named_layers():
        for name, arr in list(layer.params.items()) + list(layer.buffers.items()):
            key = f"{prefix}.{name}"
            if key not in arrays:
                raise CheckpointError(f"{path}: missing weight {key}")
            if arrays[key].shape != arr.shape:
                raise CheckpointError(
                    f"{path}: weight {key} has shape {arrays[key].shape}, expected {arr.shape}")
            arr[...] = arrays[key]
        layer.set_frozen(bool(meta["frozen"].get(prefix, False)))
    return model, config, meta


def evaluate(model: Model, dataset: Dataset) -> tuple[float, float]:
    """(accuracy, mean loss) under argmax of the readout logits."""
    if len(dataset) == 0:
        raise UsageError("evaluate needs a non-empty dataset")
    correct = 0
    total_loss = 0.0
    batch = 256
    for start in range(0, len(dataset), batch):
        x, y = dataset.x[start:start + batch], dataset.y[start:start + batch]
        logits = model.forward(x, train=False)
        loss, probs, _ = softmax_cross_entropy(logits, y)
        total_loss += loss * x.shape[0]
        correct += int((logits.argmax(axis=1) == y).sum())
    return correct / len(dataset), total_loss / len(dataset)


def train(model: Model, train_set: Dataset, config: ExperimentConfig,
          eval_set: Dataset | None = None, attack_fn=None,
          epochs: int | None = None, lr: float | None = None,
          epoch_metrics=None) -> list[dict]:
    """Mini-batch training; returns one record per epoch.

    ``attack_fn(model, x, y) -> x`` lets adversarial training perturb each
    batch before the gradient step; plain training passes no hook.
    ``epoch_metrics(model) -> dict`` appends extra read-only metrics per epoch.
    """
    if len(train_set) == 0:
        raise UsageError("train needs a non-empty dataset")
    epochs = config.epochs if epochs is None else epochs
    base_lr = config.lr if lr is None else lr
    if epochs < 1:
        raise ConfigError(f"epochs must be at least 1, got {epochs}")
    optimizer = make_optimizer(config.optimizer, base_lr)
    shuffle_rng = config.rng("shuffle")
    history = []
    for epoch in range(epochs):
        epoch_lr = scheduled_lr(config.schedule, base_lr, epoch, epochs)
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = train_set.x[idx], train_set.y[idx]
            if attack_fn is not None:
                xb = attack_fn(model, xb, yb)
            logits = model.forward(xb, train=True)
            loss, _, dlogits = softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}")
            model.backward(dlogits)
            optimizer.step(model.trainable_items(), lr=epoch_lr)
            losses.append(loss)
        record = {
            "epoch": epoch,
            "lr": epoch_lr,
            "train_loss": float(np.mean(losses)),
        }
        train_acc, _ = evaluate(model, train_set)
        record["train_accuracy"] = train_acc
        if eval_set is not None:
            test_acc, test_loss = evaluate(model, eval_set)
            record["test_accuracy"] = test_acc
            record["test_loss"] = test_loss
        if epoch_metrics is not None:
            record.update(epoch_metrics(model))
        history.append(record)
    return history


def pretrain(source_train: Dataset, config: ExperimentConfig, checkpoint_path,
             eval_set: Dataset | None = None) -> tuple[Model, list[dict]]:
    """Train extractor + readout on the source task and save the extractor."""
    if len(source_train) == 0:
        raise UsageError("pretrain needs a non-empty dataset")
    if source_train.kind != "image":
        raise ConfigError("pretraining runs on image datasets only")
    rng = config.rng("init")
    size = source_train.x.shape[-1]
    extractor = micro_extractor(size, rng)
    readout = Dense(REDUCED_WIDTH, source_train.class_count, rng=rng)
    model = Model(extractor, None, None, readout, "pretrain", "image")
    history = train(model, source_train, config, eval_set=eval_set,
                    epochs=config.pretrain_epochs, lr=config.pretrain_lr)
    save_checkpoint(checkpoint_path, extractor, seed=config.seed, regime="pretrain")
    return model, history
