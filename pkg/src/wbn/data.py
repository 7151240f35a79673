"""Dataset readers, imbalanced subsets and mini-batch partitioning.

Readers return a :class:`LabeledDataset` whose inputs are scaled into
``[0, 1]`` by dividing the raw bytes by 255.  All randomness goes through
``numpy.random.default_rng`` (PCG64, 64-bit state) so a seed fully determines
a subset or a mini-batch partition.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DataFormatError",
    "BadMagicError",
    "TruncatedFileError",
    "CountMismatchError",
    "RecordSizeError",
    "LabelRangeError",
    "LabeledDataset",
    "SubsetSpec",
    "load_idx",
    "write_idx",
    "load_cifar10_gray",
    "rgb_to_gray",
    "build_imbalanced_subset",
    "select_classes",
    "partition_minibatches",
    "MNIST_CLASSES",
    "FASHION_MNIST_CLASSES",
    "CIFAR10_CLASSES",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_SIDE = 32

MNIST_CLASSES = tuple(str(d) for d in range(10))
FASHION_MNIST_CLASSES = (
    "t-shirt", "trouser", "pullover", "dress", "coat",
    "sandal", "shirt", "sneaker", "bag", "ankle boot",
)
CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)


class DataFormatError(ValueError):
    """Base class for malformed dataset files."""


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class RecordSizeError(DataFormatError):
    pass


class LabelRangeError(DataFormatError):
    pass


@dataclass
class LabeledDataset:
    """Inputs (``N x n``, values in [0, 1]) with integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray
    class_names: tuple
    image_shape: tuple | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-d array (N x n)")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels disagree on N")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.K):
            raise ValueError("label index out of range for class_names")

    @property
    def N(self):
        return self.inputs.shape[0]

    @property
    def n(self):
        return self.inputs.shape[1]

    @property
    def K(self):
        return len(self.class_names)

    def one_hot(self):
        t = np.zeros((self.K, self.N))
        t[self.labels, np.arange(self.N)] = 1.0
        return t


@dataclass
class SubsetSpec:
    """Requested number of samples per source class index."""

    counts: dict = field(default_factory=dict)
    rng_seed: int = 0

    def __post_init__(self):
        self.counts = {int(k): int(v) for k, v in self.counts.items()}
        if any(v < 1 for v in self.counts.values()):
            raise ValueError("requested per-class counts must be positive")

    @classmethod
    def from_names(cls, counts_by_name, class_names, rng_seed=0):
        index = {name: i for i, name in enumerate(class_names)}
        counts = {}
        for key, value in counts_by_name.items():
            if key in index:
                counts[index[key]] = value
            else:
                try:
                    counts[int(key)] = value
                except ValueError:
                    raise KeyError(f"unknown class {key!r}") from None
        return cls(counts=counts, rng_seed=rng_seed)


def _read_bytes(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _unpack_header(buf, n_ints, path):
    size = 4 * n_ints
    if len(buf) < size:
        raise TruncatedFileError(f"{path}: header truncated ({len(buf)} bytes)")
    return struct.unpack(f">{n_ints}I", buf[:size])


def load_idx(images_path, labels_path, class_names=MNIST_CLASSES):
    """Read an IDX image/label pair (MNIST, Fashion-MNIST); gzip is detected automatically."""
    img = _read_bytes(images_path)
    lab = _read_bytes(labels_path)

    magic, = _unpack_header(img, 1, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise BadMagicError(f"{images_path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
    _, count, rows, cols = _unpack_header(img, 4, images_path)
    expected = 16 + count * rows * cols
    if len(img) < expected:
        raise TruncatedFileError(f"{images_path}: {len(img)} bytes, expected {expected}")

    magic, = _unpack_header(lab, 1, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise BadMagicError(f"{labels_path}: magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}")
    _, n_labels = _unpack_header(lab, 2, labels_path)
    if len(lab) < 8 + n_labels:
        raise TruncatedFileError(f"{labels_path}: {len(lab)} bytes, expected {8 + n_labels}")
    if n_labels != count:
        raise CountMismatchError(f"{count} images but {n_labels} labels")

    pixels = np.frombuffer(img, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(lab, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    if labels.size and labels.max() >= len(class_names):
        raise LabelRangeError(f"{labels_path}: label {labels.max()} out of range")
    inputs = pixels.reshape(count, rows * cols) / 255.0
    return LabeledDataset(inputs, labels, class_names, image_shape=(rows, cols))


def write_idx(images_path, labels_path, dataset):
    """Serialize ``dataset`` back to an uncompressed IDX pair (inverse of :func:`load_idx`)."""
    rows, cols = dataset.image_shape or (1, dataset.n)
    pixels = np.rint(dataset.inputs * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGE_MAGIC, dataset.N, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABEL_MAGIC, dataset.N))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def rgb_to_gray(red, green, blue):
    """BT.601 luminance ``0.299 R + 0.587 G + 0.114 B`` of byte planes, rounded half-up to bytes."""
    # integer arithmetic in thousandths keeps exact ties (e.g. 0.114 * 250 = 28.5) exact
    lum = 299 * np.asarray(red, dtype=np.int64) \
        + 587 * np.asarray(green, dtype=np.int64) \
        + 114 * np.asarray(blue, dtype=np.int64)
    return ((lum + 500) // 1000).clip(0, 255).astype(np.uint8)


def load_cifar10_gray(batch_paths, class_names=CIFAR10_CLASSES):
    """Read CIFAR-10 binary batches and convert every image to grayscale (n = 1024)."""
    plane = CIFAR_SIDE * CIFAR_SIDE
    inputs, labels = [], []
    for path in batch_paths:
        buf = _read_bytes(path)
        if len(buf) == 0 or len(buf) % CIFAR_RECORD:
            raise RecordSizeError(f"{path}: {len(buf)} bytes is not a multiple of {CIFAR_RECORD}")
        records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        lab = records[:, 0].astype(np.int64)
        if lab.max() > 9:
            raise LabelRangeError(f"{path}: label byte {lab.max()} > 9")
        rgb = records[:, 1:]
        gray = rgb_to_gray(rgb[:, :plane], rgb[:, plane:2 * plane], rgb[:, 2 * plane:])
        inputs.append(gray / 255.0)
        labels.append(lab)
    return LabeledDataset(
        np.concatenate(inputs), np.concatenate(labels), class_names,
        image_shape=(CIFAR_SIDE, CIFAR_SIDE),
    )


def _reindex(src, indices, classes):
    remap = np.full(src.K, -1, dtype=np.int64)
    remap[classes] = np.arange(len(classes))
    return LabeledDataset(
        src.inputs[indices],
        remap[src.labels[indices]],
        tuple(src.class_names[c] for c in classes),
        image_shape=src.image_shape,
    )


def build_imbalanced_subset(src, spec):
    """Draw exactly ``spec.counts[k]`` samples of each listed class without replacement.

    Classes not listed are dropped and the remaining ones are re-indexed
    densely in increasing order of their source index.
    """
    rng = np.random.default_rng(spec.rng_seed)
    classes = sorted(spec.counts)
    picked = []
    for k in classes:
        if not 0 <= k < src.K:
            raise ValueError(f"class index {k} not in source dataset")
        pool = np.flatnonzero(src.labels == k)
        want = spec.counts[k]
        if want > pool.size:
            raise ValueError(
                f"class {src.class_names[k]!r}: requested {want}, only {pool.size} available"
            )
        picked.append(np.sort(rng.choice(pool, size=want, replace=False)))
    return _reindex(src, np.concatenate(picked), classes)


def select_classes(src, classes):
    """Keep every sample of ``classes`` (used for the test split), re-indexed like a subset."""
    classes = sorted(int(c) for c in classes)
    mask = np.isin(src.labels, classes)
    return _reindex(src, np.flatnonzero(mask), classes)


def partition_minibatches(N, batch_size, rng_seed):
    """Shuffle ``range(N)`` and cut it into batches of ``batch_size``.

    A trailing batch with fewer than 2 samples is merged into the previous
    one, since batch statistics need at least 2 samples.
    """
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    if N < 2:
        raise ValueError("need at least 2 samples to form a mini-batch")
    order = np.random.default_rng(rng_seed).permutation(N)
    batches = [order[i:i + batch_size] for i in range(0, N, batch_size)]
    if len(batches) > 1 and batches[-1].size < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches
