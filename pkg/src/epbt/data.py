"""Dataset containers, file loaders (CSV and IDX), synthetic blobs, and splits."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .ioutils import atomic_write_text

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class Dataset:
    """A fixed design matrix with integer class labels.

    ``norm_offset``/``norm_scale`` record the affine normalization already
    applied to the features (None while the features are raw).
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    norm_offset: np.ndarray | float | None = None
    norm_scale: np.ndarray | float | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a (samples, dims) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be one entry per sample")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must all be finite")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, features=self.features[idx], labels=self.labels[idx])


@dataclass
class Split:
    """Disjoint train/validation/test partition of one dataset."""

    train: Dataset
    validation: Dataset
    test: Dataset


def load_csv(path: str | Path, label_column: str) -> Dataset:
    """Load a headered numeric CSV; every non-label column is a feature.

    The class count is inferred from the labels, which must be non-negative
    integers. Parse failures name the offending 1-based file row.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataFormatError(f"{path}: missing label column {label_column!r}")
        label_idx = header.index(label_column)
        feats: list[list[float]] = []
        labels: list[int] = []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {rownum}: expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise DataFormatError(f"{path}: row {rownum}: non-numeric cell ({exc})") from None
            label = values.pop(label_idx)
            if label != int(label) or label < 0:
                raise DataFormatError(f"{path}: row {rownum}: label must be a non-negative integer")
            feats.append(values)
            labels.append(int(label))
    if not feats:
        raise DataFormatError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(feats), labels_arr, class_count=int(labels_arr.max()) + 1)


def save_csv(dataset: Dataset, path: str | Path, label_column: str = "label") -> None:
    """Write a dataset as CSV; floats use shortest round-trip form, so
    `load_csv(save_csv(ds))` reproduces values bit-exactly."""
    names = [f"f{i}" for i in range(dataset.dims)] + [label_column]
    lines = [",".join(names)]
    for row, label in zip(dataset.features, dataset.labels):
        lines.append(",".join(repr(float(v)) for v in row) + f",{int(label)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _read_idx(path: Path, expected_magic: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad IDX magic {magic} (expected {expected_magic})")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DataFormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}i", raw[4:header_len])
    count = int(np.prod(dims))
    body = raw[header_len:]
    if len(body) != count:
        raise DataFormatError(f"{path}: expected {count} bytes of data, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Load big-endian IDX3 images + IDX1 labels (the classic MNIST layout).

    Pixels are scaled to [0, 1], flattened, then globally normalized to a
    zero mean pixel value and unit pixel variance.
    """
    images = _read_idx(Path(images_path), IDX_IMAGES_MAGIC)
    labels = _read_idx(Path(labels_path), IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"image/label count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels_arr = labels.astype(np.int64)
    ds = Dataset(feats, labels_arr, class_count=int(labels_arr.max()) + 1)
    return normalize_global(ds)


def normalize_global(dataset: Dataset) -> Dataset:
    """Shift/scale all features by global moments: mean 0, variance 1 overall."""
    mean = float(dataset.features.mean())
    std = float(dataset.features.std())
    scale = std if std > 1e-12 else 1.0
    feats = (dataset.features - mean) / scale
    return replace(dataset, features=feats, norm_offset=mean, norm_scale=scale)


def standardize(split: Split) -> Split:
    """Per-feature z-score using training-split statistics only.

    Constant features keep scale 1 so the transform stays defined; applying
    it twice is a no-op up to floating-point rounding.
    """
    mean = split.train.features.mean(axis=0)
    std = split.train.features.std(axis=0)
    scale = np.where(std > 1e-12, std, 1.0)

    def apply(ds: Dataset) -> Dataset:
        return replace(ds, features=(ds.features - mean) / scale, norm_offset=mean, norm_scale=scale)

    return Split(train=apply(split.train), validation=apply(split.validation), test=apply(split.test))


def synth_blobs(class_count: int, samples_per_class: int, noise_sigma: float, rng) -> Dataset:
    """Gaussian blobs: one cluster per class at fixed centers on a radius-3 circle."""
    if class_count < 2:
        raise ConfigError("blobs need at least 2 classes")
    if samples_per_class < 1:
        raise ConfigError("samples_per_class must be positive")
    angles = 2.0 * np.pi * np.arange(class_count) / class_count
    centers = 3.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    feats = np.repeat(centers, samples_per_class, axis=0)
    feats = feats + noise_sigma * rng.standard_normal(feats.shape)
    labels = np.repeat(np.arange(class_count, dtype=np.int64), samples_per_class)
    return Dataset(feats, labels, class_count=class_count)


def split(dataset: Dataset, val_fraction: float, test_fraction: float, rng) -> Split:
    """Stratified split into train/validation/test.

    Each class contributes round(fraction * class_size) samples to the
    validation and test parts; every class must land at least one sample in
    each part and keep at least one for training.
    """
    if val_fraction <= 0 or test_fraction <= 0 or val_fraction + test_fraction >= 1:
        raise ConfigError("fractions must be positive and sum to less than 1")
    val_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    train_idx: list[np.ndarray] = []
    for c in range(dataset.class_count):
        class_members = np.flatnonzero(dataset.labels == c)
        n_c = len(class_members)
        n_val = int(round(val_fraction * n_c))
        n_test = int(round(test_fraction * n_c))
        if n_val < 1 or n_test < 1 or n_val + n_test >= n_c:
            raise ConfigError(
                f"class {c}: {n_c} samples cannot fill val/test fractions "
                f"{val_fraction}/{test_fraction} and still train"
            )
        order = rng.permutation(class_members)
        val_idx.append(order[:n_val])
        test_idx.append(order[n_val:n_val + n_test])
        train_idx.append(order[n_val + n_test:])

    def gather(chunks: list[np.ndarray]) -> Dataset:
        idx = np.concatenate(chunks)
        return dataset.subset(rng.permutation(idx))

    train, validation, test = gather(train_idx), gather(val_idx), gather(test_idx)
    return Split(train=train, validation=validation, test=test)


def probe_subset(validation: Dataset, n_probe: int, rng) -> np.ndarray:
    """Sample `n_probe` distinct validation indices (done once per run)."""
    if n_probe < 1:
        raise ConfigError("probe size must be positive")
    if n_probe > len(validation):
        raise ConfigError(f"probe size {n_probe} exceeds validation size {len(validation)}")
    idx = rng.choice(len(validation), size=n_probe, replace=False)
    return np.sort(idx.astype(np.int64))
