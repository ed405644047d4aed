"""Data ingestion: CIFAR-10 binary files, synthetic blobs, and batching.

No augmentation happens anywhere in this module (or package): images are
scaled to [0, 1] and standardized per channel with statistics computed on
the training split, nothing else.

CIFAR-10 binary layout: records of 3073 bytes; byte 0 is the label,
bytes 1..3072 are pixels in channel-planar order (1024 red, 1024 green,
1024 blue), each plane a row-major 32x32 grid.

Synthetic dataset text layout: a header line `n dim num_classes`, then one
record per line: `label v1 v2 ... v<dim>` (space-delimited, label -1 when
absent).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    CorruptRecordError,
    EmptyInputError,
    MalformedFileError,
)

CIFAR_RECORD_BYTES = 3073
CIFAR_IMAGE_SHAPE = (3, 32, 32)
CIFAR_NUM_CLASSES = 10
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)

# stream tags keep the shuffle, blob-center and blob-noise RNGs disjoint
_SHUFFLE_TAG = 0x5A
_CENTER_TAG = 0xC0
_NOISE_TAG = 0x17


@dataclass(frozen=True)
class Dataset:
    """An immutable, index-addressed dataset.

    ``inputs`` holds the model-ready (normalized) samples; row i is sample
    index i.  ``raw`` keeps the original uint8 pixels for cifar10 so the
    binary layout round-trips exactly.
    """

    kind: str  # "cifar10" | "synthetic"
    inputs: np.ndarray  # float32, (N, 3, 32, 32) or (N, D)
    labels: np.ndarray | None  # int64 (N,), or None
    channel_mean: np.ndarray  # float64, per channel (or per-dim identity)
    channel_std: np.ndarray
    raw: np.ndarray | None = None  # uint8 (N, 3, 32, 32), cifar10 only

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            raise EmptyInputError("dataset has no labels")
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray  # int64 (B,)
    inputs: np.ndarray  # float32 (B, ...)

    def __len__(self) -> int:
        return self.indices.shape[0]


def parse_cifar10_file(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Parse one CIFAR-10 binary file into (images_u8, labels).

    Returns images of shape (n, 3, 32, 32) uint8 and labels int64.
    """
    if len(data) % CIFAR_RECORD_BYTES != 0:
        offset = len(data) - (len(data) % CIFAR_RECORD_BYTES)
        raise MalformedFileError(
            f"file length {len(data)} is not a multiple of {CIFAR_RECORD_BYTES}; "
            f"trailing partial record starts at offset {offset}"
        )
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= CIFAR_NUM_CLASSES)[0]
    if bad.size:
        raise CorruptRecordError(
            f"record {int(bad[0])} has label byte {int(labels[bad[0]])} > 9"
        )
    images = records[:, 1:].reshape(-1, *CIFAR_IMAGE_SHAPE).copy()
    return images, labels


def serialize_cifar10(images: np.ndarray, labels: np.ndarray) -> bytes:
    """Inverse of :func:`parse_cifar10_file` (bit-exact round trip)."""
    n = images.shape[0]
    records = np.empty((n, CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels.astype(np.uint8)
    records[:, 1:] = images.reshape(n, -1)
    return records.tobytes()


def _standardize(pixels01: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    shaped = mean.reshape(1, -1, 1, 1), std.reshape(1, -1, 1, 1)
    return ((pixels01 - shaped[0]) / shaped[1]).astype(np.float32)


def normalization_stats(images_u8: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std of [0,1]-scaled pixels, in float64."""
    pixels = images_u8.astype(np.float64) / 255.0
    mean = pixels.mean(axis=(0, 2, 3))
    std = pixels.std(axis=(0, 2, 3))
    std[std == 0] = 1.0
    return mean, std


def dataset_from_cifar_arrays(
    images: np.ndarray,
    labels: np.ndarray,
    mean: np.ndarray | None = None,
    std: np.ndarray | None = None,
) -> Dataset:
    """Build a normalized cifar10 Dataset; stats default to this split's own."""
    if images.shape[0] == 0:
        raise EmptyInputError("no records")
    if mean is None or std is None:
        mean, std = normalization_stats(images)
    pixels = images.astype(np.float64) / 255.0
    return Dataset(
        kind="cifar10",
        inputs=_standardize(pixels, mean, std),
        labels=labels.astype(np.int64),
        channel_mean=np.asarray(mean, dtype=np.float64),
        channel_std=np.asarray(std, dtype=np.float64),
        raw=images,
    )


def load_cifar10(
    data_dir: str | Path,
    train_files: tuple[str, ...] = CIFAR_TRAIN_FILES,
    test_files: tuple[str, ...] = CIFAR_TEST_FILES,
) -> tuple[Dataset, Dataset]:
    """Load train/test splits; the test split reuses train-split statistics."""
    data_dir = Path(data_dir)

    def read_shards(names):
        images, labels = [], []
        for name in names:
            path = data_dir / name
            if not path.exists():
                raise MalformedFileError(f"missing data file: {path}")
            imgs, labs = parse_cifar10_file(path.read_bytes())
            images.append(imgs)
            labels.append(labs)
        return np.concatenate(images), np.concatenate(labels)

    train_images, train_labels = read_shards(train_files)
    mean, std = normalization_stats(train_images)
    train = dataset_from_cifar_arrays(train_images, train_labels, mean, std)
    test_images, test_labels = read_shards(test_files)
    test = dataset_from_cifar_arrays(test_images, test_labels, mean, std)
    return train, test


def blob_centers(num_classes: int, dim: int, separation: float, seed: int) -> np.ndarray:
    """Gaussian-drawn class centers rescaled so the minimum pairwise
    Euclidean distance is at least ``separation``."""
    rng = np.random.default_rng([seed, _CENTER_TAG])
    centers = rng.standard_normal((num_classes, dim))
    if num_classes > 1:
        diffs = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diffs**2).sum(-1))
        d_min = dist[np.triu_indices(num_classes, k=1)].min()
        while d_min == 0.0:  # astronomically unlikely; stay safe
            centers = rng.standard_normal((num_classes, dim))
            diffs = centers[:, None, :] - centers[None, :, :]
            dist = np.sqrt((diffs**2).sum(-1))
            d_min = dist[np.triu_indices(num_classes, k=1)].min()
        # the (1 + 1e-9) pad keeps the minimum >= separation after rounding
        centers = centers * (separation / d_min) * (1.0 + 1e-9)
    return centers


def make_synthetic_blobs(
    n_per_class: int,
    num_classes: int,
    dim: int,
    separation: float,
    seed: int,
    noise_seed: int | None = None,
) -> Dataset:
    """Isotropic unit-variance Gaussian clusters with well-separated centers.

    ``noise_seed`` lets two datasets share centers (same ``seed``) while
    drawing independent samples, e.g. a train/test pair.
    """
    if n_per_class < 1 or num_classes < 1 or dim < 1:
        raise ConfigurationError("n_per_class, num_classes and dim must be >= 1")
    if separation <= 0:
        raise ConfigurationError("separation must be > 0")
    centers = blob_centers(num_classes, dim, separation, seed)
    rng = np.random.default_rng([seed if noise_seed is None else noise_seed, _NOISE_TAG])
    noise = rng.standard_normal((num_classes * n_per_class, dim))
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), n_per_class)
    points = centers[labels] + noise
    return Dataset(
        kind="synthetic",
        inputs=points.astype(np.float32),
        labels=labels,
        channel_mean=np.zeros(dim, dtype=np.float64),
        channel_std=np.ones(dim, dtype=np.float64),
    )


def save_synthetic(dataset: Dataset, path: str | Path) -> None:
    """Write a synthetic dataset in the documented text layout."""
    n, dim = dataset.inputs.shape
    num_classes = dataset.num_classes if dataset.labels is not None else 0
    lines = [f"{n} {dim} {num_classes}"]
    labels = dataset.labels if dataset.labels is not None else np.full(n, -1)
    for i in range(n):
        values = " ".join(repr(float(v)) for v in dataset.inputs[i])
        lines.append(f"{int(labels[i])} {values}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_synthetic(path: str | Path) -> Dataset:
    """Read a synthetic dataset written by :func:`save_synthetic`."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise MalformedFileError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 3:
        raise MalformedFileError(f"{path}:1: header must be 'n dim num_classes'")
    try:
        n, dim, num_classes = (int(tok) for tok in header)
    except ValueError as exc:
        raise MalformedFileError(f"{path}:1: non-integer header field") from exc
    if len(lines) - 1 != n:
        raise MalformedFileError(f"{path}: header says {n} records, found {len(lines) - 1}")
    inputs = np.empty((n, dim), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if len(tokens) != dim + 1:
            raise MalformedFileError(f"{path}:{i}: expected {dim + 1} fields, got {len(tokens)}")
        labels[i - 2] = int(tokens[0])
        inputs[i - 2] = [float(tok) for tok in tokens[1:]]
    has_labels = bool((labels >= 0).all()) and num_classes > 0
    return Dataset(
        kind="synthetic",
        inputs=inputs,
        labels=labels if has_labels else None,
        channel_mean=np.zeros(dim, dtype=np.float64),
        channel_std=np.ones(dim, dtype=np.float64),
    )


def subset(dataset: Dataset, indices: np.ndarray) -> Dataset:
    """Re-indexed view of a dataset (indices renumbered to 0..len-1)."""
    indices = np.asarray(indices)
    return Dataset(
        kind=dataset.kind,
        inputs=dataset.inputs[indices],
        labels=None if dataset.labels is None else dataset.labels[indices],
        channel_mean=dataset.channel_mean,
        channel_std=dataset.channel_std,
        raw=None if dataset.raw is None else dataset.raw[indices],
    )


def epoch_permutation(n: int, epoch: int, seed: int) -> np.ndarray:
    """Deterministic permutation of 0..n-1 keyed by (seed, epoch) only."""
    rng = np.random.default_rng([seed, epoch, _SHUFFLE_TAG])
    return rng.permutation(n)


def epoch_batches(dataset: Dataset, batch_size: int, epoch: int, seed: int) -> list[Batch]:
    """Shuffled batches covering every sample exactly once.

    The final batch may be short; batch order is a pure function of
    (seed, epoch) so runs are bit-reproducible.
    """
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    n = len(dataset)
    if n == 0:
        raise EmptyInputError("cannot batch an empty dataset")
    perm = epoch_permutation(n, epoch, seed)
    batches = []
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        batches.append(Batch(indices=idx, inputs=dataset.inputs[idx]))
    return batches
