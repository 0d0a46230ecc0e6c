"""Dataset loading: IDX (MNIST) files and seeded synthetic generators."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class Dataset:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    @property
    def n_features(self) -> int:
        return self.x_train.shape[1]

    def astype(self, dtype) -> "Dataset":
        return Dataset(self.name, self.x_train.astype(dtype, copy=False), self.y_train,
                       self.x_test.astype(dtype, copy=False), self.y_test, self.n_classes)


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def parse_idx(raw: bytes, expected_magic: int, name: str = "<idx>") -> np.ndarray:
    """Parse an unsigned-byte IDX payload into an array of its declared shape."""
    if len(raw) < 4:
        raise FormatError(f"{name}: file too short for IDX magic", offset=len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{name}: magic 0x{magic:08x} != expected 0x{expected_magic:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{name}: truncated header, expected {header} bytes, got {len(raw)}",
                          offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + math.prod(dims)
    if len(raw) != expected:
        kind = "truncated" if len(raw) < expected else "oversized"
        raise FormatError(f"{name}: {kind} file, expected {expected} bytes, got {len(raw)}",
                          offset=min(len(raw), expected))
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    path = Path(path)
    return parse_idx(_read_bytes(path), IMAGE_MAGIC, path.name)


def read_idx_labels(path, n_classes: int = 10) -> np.ndarray:
    path = Path(path)
    labels = parse_idx(_read_bytes(path), LABEL_MAGIC, path.name)
    bad = np.flatnonzero(labels >= n_classes)
    if bad.size:
        raise FormatError(f"{path.name}: label {labels[bad[0]]} outside [0, {n_classes})",
                          offset=8 + int(bad[0]))
    return labels


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX; gzip-compressed when ``path`` ends in .gz."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    payload = struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.GzipFile(path, "wb", mtime=0) as f:
            f.write(payload)
    else:
        path.write_bytes(payload)


def _find(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise ConfigError(f"MNIST file {stem}[.gz] not found in {directory}")


def load_mnist(path) -> Dataset:
    """Load the four MNIST IDX files from a directory, pixels scaled to [0, 1]."""
    directory = Path(path)
    if not directory.is_dir():
        raise ConfigError(f"MNIST directory {directory} does not exist")
    files = {key: _find(directory, stem) for key, stem in MNIST_FILES.items()}
    x_train = read_idx_images(files["train_images"])
    y_train = read_idx_labels(files["train_labels"])
    x_test = read_idx_images(files["test_images"])
    y_test = read_idx_labels(files["test_labels"])
    if len(x_train) != len(y_train) or len(x_test) != len(y_test):
        raise FormatError("image and label counts differ")
    return Dataset(
        "mnist",
        (x_train.reshape(len(x_train), -1) / np.float32(255)).astype(np.float32),
        y_train.astype(np.int64),
        (x_test.reshape(len(x_test), -1) / np.float32(255)).astype(np.float32),
        y_test.astype(np.int64),
        10,
    )


def synth_dataset(kind: str, n: int, noise: float, seed: int, *, n_classes: int = 2,
                  dim: int = 2, n_test: int | None = None, spread: float = 5.0) -> Dataset:
    """Seeded toy classification data.

    ``blobs``: draws ``n_classes`` centers from ``U(-spread, spread)^dim``, then
    point ``i`` gets label ``i % n_classes`` and sits at its center plus
    ``noise * N(0, I)``. Test points continue the same stream.

    ``moons``: two interleaved half circles in 2-D (``n_classes`` and ``dim``
    are ignored). The first ``ceil(n/2)`` points trace the upper moon
    ``(cos a, sin a)`` and the rest the lower moon ``(1 - cos a, 0.5 - sin a)``
    with ``a`` evenly spaced on ``[0, pi]``; Gaussian noise is added after.
    """
    if n <= 0:
        raise ConfigError(f"dataset size must be positive, got {n}")
    if noise < 0:
        raise ConfigError("noise must be non-negative")
    n_test = max(n // 4, 1) if n_test is None else n_test
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        if n_classes < 2 or dim < 1:
            raise ConfigError("blobs need at least 2 classes and 1 dimension")
        centers = rng.uniform(-spread, spread, (n_classes, dim))

        def draw(m):
            y = np.arange(m) % n_classes
            return centers[y] + noise * rng.standard_normal((m, dim)), y

    elif kind == "moons":
        n_classes = 2

        def draw(m):
            upper = (m + 1) // 2
            a_up = np.linspace(0, np.pi, upper)
            a_lo = np.linspace(0, np.pi, m - upper)
            x = np.concatenate([
                np.stack([np.cos(a_up), np.sin(a_up)], axis=1),
                np.stack([1 - np.cos(a_lo), 0.5 - np.sin(a_lo)], axis=1),
            ])
            y = np.concatenate([np.zeros(upper, np.int64), np.ones(m - upper, np.int64)])
            return x + noise * rng.standard_normal((m, 2)), y

    else:
        raise ConfigError(f"unknown synthetic dataset {kind!r}; expected blobs or moons")
    x_train, y_train = draw(n)
    x_test, y_test = draw(n_test)
    return Dataset(f"synthetic_{kind}", x_train, y_train.astype(np.int64),
                   x_test, y_test.astype(np.int64), n_classes)


class BatchStream:
    """Endless seeded minibatch index stream.

    Each epoch is a fresh permutation; a trailing partial batch is dropped so
    every batch has exactly ``batch_size`` rows (or all rows if the dataset is
    smaller than one batch).
    """

    def __init__(self, n: int, batch_size: int, seed):
        if n <= 0:
            raise ConfigError("cannot stream batches from an empty dataset")
        if batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self.epoch = 0
        self._order = np.empty(0, dtype=np.intp)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self._order.size:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
            self.epoch += 1
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx
