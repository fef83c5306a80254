"""Datasets: MNIST IDX files, splits, one-hot targets and a 2-D polygon task."""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ContractError,
    CountMismatchError,
    DataError,
    TruncatedIdxError,
)
from .numerics import Rng, derive_seed

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_UBYTE = 0x08


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Inputs ``N x d`` (float64), integer labels and one-hot targets.

    Arrays are flagged read-only; transformations return new datasets.
    """

    inputs: np.ndarray
    labels: np.ndarray
    targets: np.ndarray
    class_count: int

    @classmethod
    def from_arrays(cls, inputs, labels, class_count):
        inputs = np.asarray(inputs, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if inputs.ndim != 2 or labels.shape != (inputs.shape[0],):
            raise ContractError(f"inputs {inputs.shape} and labels {labels.shape} disagree")
        if labels.size and (labels.min() < 0 or labels.max() >= class_count):
            raise ContractError(f"labels must lie in [0, {class_count})")
        targets = np.zeros((labels.size, class_count))
        targets[np.arange(labels.size), labels] = 1.0
        return cls(_readonly(inputs), _readonly(labels), _readonly(targets), int(class_count))

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def take(self, index):
        index = np.asarray(index)
        return Dataset(
            _readonly(self.inputs[index]),
            _readonly(self.labels[index]),
            _readonly(self.targets[index]),
            self.class_count,
        )

    def with_inputs(self, inputs):
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.shape[0] != len(self):
            raise ContractError("replacement inputs have a different row count")
        return Dataset(_readonly(inputs), self.labels, self.targets, self.class_count)


@dataclass(frozen=True)
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset
    description: str = ""

    def map_inputs(self, fn):
        return Splits(
            self.train.with_inputs(fn(self.train.inputs)),
            self.val.with_inputs(fn(self.val.inputs)),
            self.test.with_inputs(fn(self.test.inputs)),
            self.description,
        )


@dataclass(frozen=True)
class SplitSpec:
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ContractError("val_fraction must lie in (0, 1)")


# -- IDX ---------------------------------------------------------------------

def _read_bytes(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing data file: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes, expected_magic=None):
    """Decode an unsigned-byte IDX payload into a numpy array."""
    if len(raw) < 4:
        raise TruncatedIdxError("file shorter than the 4-byte magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise BadMagicError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != _UBYTE:
        raise BadMagicError(f"bad magic 0x{magic:08x}: not an unsigned-byte IDX file")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedIdxError("IDX dimension header is truncated")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    count = math.prod(shape)
    payload = raw[header:]
    if len(payload) < count:
        raise TruncatedIdxError(f"payload has {len(payload)} bytes, header promises {count}")
    return np.frombuffer(payload, dtype=np.uint8, count=count).reshape(shape).copy()


def read_idx(path, expected_magic=None):
    return parse_idx(_read_bytes(path), expected_magic)


def encode_idx(array) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ContractError("only unsigned-byte IDX tensors are supported")
    magic = (_UBYTE << 8) | array.ndim
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + np.ascontiguousarray(array).tobytes()


def write_idx(path, array, compress=False):
    data = encode_idx(array)
    if compress:
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


def load_idx(images_path, labels_path):
    """Read an image/label IDX pair; returns ``(images[N, rows, cols], labels[N])``."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images, labels


def to_dataset(images, labels, class_count=10):
    """Flatten and scale pixels from ``[0, 255]`` into ``[0, 1]``."""
    images = np.asarray(images)
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset.from_arrays(inputs, labels, class_count)


def split(data: Dataset, spec: SplitSpec = SplitSpec()):
    """Seeded permutation; the first ``ceil((1 - val_fraction) N)`` rows train."""
    n = len(data)
    if n < 2:
        raise ContractError("split needs at least two patterns")
    frac = Fraction(spec.val_fraction).limit_denominator(10**9)
    n_val = math.floor(frac * n)
    order = Rng(spec.seed).permutation(n)
    cut = n - n_val
    return data.take(order[:cut]), data.take(order[cut:])


# -- MNIST -------------------------------------------------------------------

_MNIST_NAMES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def find_mnist_files(directory):
    directory = Path(directory)
    found = {}
    for key, names in _MNIST_NAMES.items():
        for name in names:
            for suffix in ("", ".gz"):
                candidate = directory / (name + suffix)
                if candidate.exists():
                    found[key] = candidate
                    break
            if key in found:
                break
        if key not in found:
            raise DataError(f"no {names[0]}[.gz] under {directory}")
    return found


def default_mnist_dir():
    return os.environ.get("ARCHFORGE_MNIST_DIR")


def load_mnist(directory, subset=False, split_seed=0):
    """MNIST as train/val/test.

    Full mode splits 20% of the 60,000 training images off for validation.
    Subset mode (the desk-scale CI setting) trains on the first 10,000
    training images, validates on the next 2,000 and tests on all 10,000.
    """
    files = find_mnist_files(directory)
    train_all = to_dataset(*load_idx(files["train_images"], files["train_labels"]))
    test = to_dataset(*load_idx(files["test_images"], files["test_labels"]))
    if subset:
        train = train_all.take(np.arange(10_000))
        val = train_all.take(np.arange(10_000, 12_000))
        desc = "mnist-subset(10000/2000/10000)"
    else:
        train, val = split(train_all, SplitSpec(0.2, split_seed))
        desc = f"mnist-full({len(train)}/{len(val)}/{len(test)})"
    return Splits(train, val, test, desc)


# -- synthetic polygons ------------------------------------------------------

# Counter-clockwise vertices in the unit square. Both shapes are convex and
# together nearly fill the triangle above the diagonal y = x, split by a
# class-0 gap of width ~0.028 along x + y = 1; the corners stay class 0.
# A linear boundary through the origin gets most points right, so short runs
# learn quickly; the gap needs a hidden layer.
QUADRILATERAL = np.array([[0.03, 0.03], [0.49, 0.49], [0.02, 0.96], [0.0, 0.95]])
PENTAGON = np.array([[0.51, 0.51], [0.99, 0.99], [0.97, 1.0], [0.04, 1.0], [0.03, 0.99]])
POLYGONS = (QUADRILATERAL, PENTAGON)


def polygon_area(vertices):
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def inside_convex(points, vertices):
    """Boolean mask of points inside (or on) a counter-clockwise convex polygon."""
    points = np.atleast_2d(points)
    inside = np.ones(points.shape[0], dtype=bool)
    for a, b in zip(vertices, np.roll(vertices, -1, axis=0)):
        cross = (b[0] - a[0]) * (points[:, 1] - a[1]) - (b[1] - a[1]) * (points[:, 0] - a[0])
        inside &= cross >= 0.0
    return inside


def polygon_labels(points):
    hit = np.zeros(np.atleast_2d(points).shape[0], dtype=bool)
    for poly in POLYGONS:
        hit |= inside_convex(points, poly)
    return hit.astype(np.int64)


def synthetic_polygons(n, seed):
    """``n`` uniform points in the unit square; label 1 inside either polygon."""
    if n < 1:
        raise ContractError("need at least one synthetic point")
    points = Rng(seed).uniform(0.0, 1.0, size=(n, 2))
    return Dataset.from_arrays(points, polygon_labels(points), 2)


def synthetic_splits(n, seed, test_n=None):
    """Polygon task as train/val/test; ``n`` points are split 80/20."""
    pool = synthetic_polygons(n, derive_seed(seed, 0))
    train, val = split(pool, SplitSpec(0.2, derive_seed(seed, 1)))
    test = synthetic_polygons(test_n or max(n // 2, 1), derive_seed(seed, 2))
    return Splits(train, val, test, f"synthetic-polygons(n={n}, seed={seed})")
