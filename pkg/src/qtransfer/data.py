"""Dataset ingestion, synthetic generation, and splitting.

Two on-disk formats are supported: IDX binary images (big-endian, standard
magic numbers 0x00000803 / 0x00000801) and feature-vector CSV with header
``f0..fK,label`` (UTF-8, LF line endings).  The synthetic generator renders
oriented-bar images so related tasks can share low-level structure while
using disjoint classes.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .validation import ConfigError, check_labels

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

DATASET_KINDS = ("image", "feature_vector")


class BadMagicError(ValueError):
    """An IDX file does not start with the expected magic number."""


class TruncatedFileError(ValueError):
    """An IDX file ends before its declared payload."""


class CountMismatchError(ValueError):
    """Image and label files declare different sample counts."""


class CsvFormatError(ValueError):
    """A feature CSV has a bad header, ragged row, or non-numeric field."""


@dataclass(frozen=True)
class Dataset:
    """Homogeneous samples: images (n, 1, h, w) in [0, 1] or feature rows (n, k)."""

    x: np.ndarray
    y: np.ndarray
    class_count: int
    kind: str
    normalization: str = "unit_scale"

    def __post_init__(self) -> None:
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}; choose from {DATASET_KINDS}")
        x = np.asarray(self.x, dtype=np.float64)
        y = check_labels(self.y, self.class_count)
        if self.class_count <= 0:
            raise ConfigError(f"class_count must be positive, got {self.class_count}")
        expected_ndim = 4 if self.kind == "image" else 2
        if x.ndim != expected_ndim:
            raise ConfigError(
                f"{self.kind} dataset needs {expected_ndim}-d inputs, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise CountMismatchError(
                f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if not np.all(np.isfinite(x)):
            raise ValueError("dataset inputs contain non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def feature_width(self) -> int:
        if self.kind != "feature_vector":
            raise ConfigError("feature_width only applies to feature_vector datasets")
        return self.x.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.class_count, self.kind,
                       self.normalization)


def _read_header(buf: bytes, path, expected_magic: int, n_dims: int) -> tuple[tuple[int, ...], int]:
    header_len = 4 * (1 + n_dims)
    if len(buf) < header_len:
        raise TruncatedFileError(f"{path}: file shorter than its {header_len}-byte header")
    fields = struct.unpack(f">{1 + n_dims}I", buf[:header_len])
    if fields[0] != expected_magic:
        raise BadMagicError(
            f"{path}: magic 0x{fields[0]:08x}, expected 0x{expected_magic:08x}")
    return fields[1:], header_len


def load_idx(image_path, label_path) -> Dataset:
    """Load an IDX image/label file pair; pixels scaled to [0, 1]."""
    img_buf = open(image_path, "rb").read()
    (n, rows, cols), offset = _read_header(img_buf, image_path, IDX_IMAGE_MAGIC, 3)
    payload = img_buf[offset:]
    if len(payload) < n * rows * cols:
        raise TruncatedFileError(
            f"{image_path}: expected {n * rows * cols} pixel bytes, found {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8, count=n * rows * cols)
    x = pixels.reshape(n, 1, rows, cols).astype(np.float64) / 255.0

    lbl_buf = open(label_path, "rb").read()
    (n_labels,), offset = _read_header(lbl_buf, label_path, IDX_LABEL_MAGIC, 1)
    lbl_payload = lbl_buf[offset:]
    if len(lbl_payload) < n_labels:
        raise TruncatedFileError(
            f"{label_path}: expected {n_labels} label bytes, found {len(lbl_payload)}")
    if n_labels != n:
        raise CountMismatchError(f"{n} images but {n_labels} labels")
    y = np.frombuffer(lbl_payload, dtype=np.uint8, count=n_labels).astype(np.int64)
    class_count = int(y.max()) + 1 if n else 1
    return Dataset(x, y, class_count, "image")


def save_idx(dataset: Dataset, image_path, label_path) -> None:
    """Write an image dataset as an IDX pair (pixels quantized to uint8)."""
    if dataset.kind != "image":
        raise ConfigError("save_idx needs an image dataset")
    n, _, rows, cols = dataset.x.shape
    pixels = np.clip(np.round(dataset.x * 255.0), 0, 255).astype(np.uint8)
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(pixels.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABEL_MAGIC, n))
        fh.write(dataset.y.astype(np.uint8).tobytes())


def _expected_header(width: int) -> list[str]:
    return [f"f{i}" for i in range(width)] + ["label"]


def load_feature_csv(path) -> Dataset:
    """Load a ``f0..fK,label`` feature CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        width = len(header) - 1
        if width < 1 or header != _expected_header(width):
            raise CsvFormatError(
                f"{path}: header {header[:4]}... does not match f0..fK,label")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise CsvFormatError(
                    f"{path}:{lineno}: expected {width + 1} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    x = np.asarray(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if y.min() < 0:
        raise CsvFormatError(f"{path}: negative label")
    return Dataset(x, y, int(y.max()) + 1, "feature_vector", normalization="none")


def save_feature_csv(dataset: Dataset, path) -> None:
    """Write a feature-vector dataset in the ``f0..fK,label`` schema."""
    if dataset.kind != "feature_vector":
        raise ConfigError("save_feature_csv needs a feature_vector dataset")
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_expected_header(dataset.x.shape[1]))
        for row, label in zip(dataset.x, dataset.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


@dataclass(frozen=True)
class SynthSpec:
    """Controls for the oriented-bar synthetic image generator."""

    classes: int = 2
    samples_per_class: int = 50
    image_size: int = 16
    seed: int = 0
    difficulty: float = 0.5
    style_offset: int = 0
    n_angles: int = field(default=8, repr=False)

    def __post_init__(self) -> None:
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.samples_per_class < 1:
            raise ConfigError(f"samples_per_class must be positive, got {self.samples_per_class}")
        if self.image_size < 8:
            raise ConfigError(f"image_size must be at least 8, got {self.image_size}")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ConfigError(f"difficulty must lie in [0, 1], got {self.difficulty}")


def _render_bar(size: int, angle: float, intensity: float, thickness: float,
                center: np.ndarray) -> np.ndarray:
    """Gaussian ridge through ``center`` at ``angle`` (0 = horizontal bar)."""
    coords = np.arange(size, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    dx, dy = xx - center[0], yy - center[1]
    # perpendicular distance to the bar's axis and position along it
    perp = np.abs(dx * np.sin(angle) - dy * np.cos(angle))
    along = np.abs(dx * np.cos(angle) + dy * np.sin(angle))
    half_len = 0.38 * size
    profile = np.exp(-((perp / thickness) ** 2))
    profile *= 1.0 / (1.0 + np.exp(2.0 * (along - half_len)))
    return intensity * profile


def synth_generate(spec: SynthSpec) -> Dataset:
    """Deterministic oriented-bar dataset; class k draws angle (k + style_offset) mod n_angles."""
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    noise_sigma = 0.02 + 0.3 * spec.difficulty
    jitter = 2.0 * spec.difficulty
    angle_jitter = 0.08 * spec.difficulty
    images = np.empty((spec.classes * spec.samples_per_class, 1, size, size))
    labels = np.empty(spec.classes * spec.samples_per_class, dtype=np.int64)
    i = 0
    for k in range(spec.classes):
        base_angle = np.pi * ((k + spec.style_offset) % spec.n_angles) / spec.n_angles
        # the brightness cue fades with difficulty and per-sample jitter
        # swamps what remains, so hard variants are only solvable by
        # orientation, not by mean intensity
        ramp = k / max(spec.classes - 1, 1)
        base_intensity = 0.5 + 0.5 * ramp * (1.0 - spec.difficulty)
        for _ in range(spec.samples_per_class):
            center = (size - 1) / 2.0 + rng.uniform(-jitter, jitter, size=2)
            angle = base_angle + rng.uniform(-angle_jitter, angle_jitter)
            intensity = float(np.clip(
                base_intensity + spec.difficulty * rng.uniform(-0.2, 0.2), 0.2, 1.0))
            img = _render_bar(size, angle, intensity, thickness=1.3, center=center)
            img += rng.normal(0.0, noise_sigma, size=(size, size))
            images[i, 0] = np.clip(img, 0.0, 1.0)
            labels[i] = k
            i += 1
    return Dataset(images, labels, spec.classes, "image")


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified seeded split into (train, test); disjoint and exhaustive."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for k in range(dataset.class_count):
        members = np.flatnonzero(dataset.y == k)
        rng.shuffle(members)
        n_train = int(round(train_fraction * members.size))
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    rng.shuffle(train_idx)
    rng.shuffle(test_idx)
    return dataset.subset(train_idx), dataset.subset(test_idx)
