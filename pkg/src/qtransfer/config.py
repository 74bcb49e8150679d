"""Experiment configuration: one validated object fully determines a run."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .data import SynthSpec
from .nn.optim import OPTIMIZER_KINDS, SCHEDULE_KINDS
from .qvc import ENCODING_MODES
from .validation import ConfigError

REGIMES = ("classical_tl", "classical_no_tl", "quantum_tl", "quantum_no_tl")
TL_REGIMES = ("classical_tl", "quantum_tl")

# named RNG streams derived from the master seed; adding a name must not
# change the draws of existing streams
STREAM_IDS = {"data": 0, "split": 1, "init": 2, "shuffle": 3, "attack": 4}


def seed_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose under a master seed."""
    if name not in STREAM_IDS:
        raise ConfigError(f"unknown seed stream {name!r}; choose from {sorted(STREAM_IDS)}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAM_IDS[name]]))


@dataclass(frozen=True)
class DataSourceConfig:
    """Where a dataset comes from: the synthetic generator, IDX files, or a CSV."""

    kind: str = "synth"
    classes: int = 2
    samples_per_class: int = 50
    image_size: int = 16
    difficulty: float = 0.5
    style_offset: int = 0
    image_path: str | None = None
    label_path: str | None = None
    csv_path: str | None = None
    train_fraction: float = 0.8

    def __post_init__(self) -> None:
        if self.kind not in ("synth", "idx", "csv"):
            raise ConfigError(f"unknown data source kind {self.kind!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.kind == "idx" and not (self.image_path and self.label_path):
            raise ConfigError("idx source needs image_path and label_path")
        if self.kind == "csv" and not self.csv_path:
            raise ConfigError("csv source needs csv_path")
        if self.kind == "synth":
            self.to_synth_spec(seed=0)  # validates the synth fields

    def to_synth_spec(self, seed: int) -> SynthSpec:
        if self.kind != "synth":
            raise ConfigError(f"data source kind is {self.kind!r}, not synth")
        return SynthSpec(classes=self.classes, samples_per_class=self.samples_per_class,
                         image_size=self.image_size, seed=seed, difficulty=self.difficulty,
                         style_offset=self.style_offset)


def _default_source() -> DataSourceConfig:
    # pretraining task: all eight orientations, enough samples and noise
    # that the extractor must learn orientation features rather than
    # brightness shortcuts
    return DataSourceConfig(kind="synth", classes=8, samples_per_class=60, difficulty=0.65,
                            style_offset=0)


def _default_target() -> DataSourceConfig:
    # two of the orientations under much heavier noise and a small train
    # split: hard from raw pixels in the epoch budget, easy on top of
    # transferred orientation features
    return DataSourceConfig(kind="synth", classes=2, samples_per_class=100, difficulty=0.9,
                            style_offset=0, train_fraction=0.45)


@dataclass(frozen=True)
class ExperimentConfig:
    regime: str = "quantum_tl"
    n_qubits: int = 6
    depth: int = 6
    encoding: str = "tanh_half_pi"
    linear_scale: float = 2.0
    ring: bool = False
    epochs: int = 50
    batch_size: int = 16
    lr: float = 0.0004
    optimizer: str = "adam"
    schedule: str = "constant_then_linear_decay"
    seed: int = 0
    init_spread: float = 0.01
    attack_budgets: tuple[float, ...] = (0.1, 0.2, 0.3)
    mix_ratio: float = 0.5
    fixed_readout: bool = False
    pretrain_epochs: int = 20
    pretrain_lr: float = 0.01
    source_data: DataSourceConfig = field(default_factory=_default_source)
    target_data: DataSourceConfig = field(default_factory=_default_target)
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if not 1 <= self.n_qubits <= 12:
            raise ConfigError(f"n_qubits must lie in [1, 12], got {self.n_qubits}")
        if self.depth < 1:
            raise ConfigError(f"depth must be at least 1, got {self.depth}")
        if self.encoding not in ENCODING_MODES:
            raise ConfigError(f"unknown encoding {self.encoding!r}; choose from {ENCODING_MODES}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZER_KINDS}")
        if self.schedule not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule {self.schedule!r}; choose from {SCHEDULE_KINDS}")
        if self.init_spread <= 0:
            raise ConfigError(f"init_spread must be positive, got {self.init_spread}")
        budgets = tuple(float(e) for e in self.attack_budgets)
        if any(e < 0 for e in budgets):
            raise ConfigError(f"attack budgets must be non-negative, got {budgets}")
        object.__setattr__(self, "attack_budgets", budgets)
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ConfigError(f"mix_ratio must lie in [0, 1], got {self.mix_ratio}")
        if self.pretrain_epochs < 1:
            raise ConfigError(f"pretrain_epochs must be at least 1, got {self.pretrain_epochs}")

    @property
    def is_tl(self) -> bool:
        return self.regime in TL_REGIMES

    @property
    def is_quantum(self) -> bool:
        return self.regime.startswith("quantum")

    def rng(self, stream: str) -> np.random.Generator:
        return seed_stream(self.seed, stream)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for key in ("source_data", "target_data"):
            if key in raw and isinstance(raw[key], dict):
                raw[key] = DataSourceConfig(**raw[key])
        if "attack_budgets" in raw:
            raw["attack_budgets"] = tuple(raw["attack_budgets"])
        return cls(**raw)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(raw)

    def replaced(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)
