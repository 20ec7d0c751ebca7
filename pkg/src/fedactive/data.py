"""Datasets: MNIST from IDX files and seeded Gaussian blobs."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .federation import FederatedData
from .partition import DatasetIndex

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def parse_idx(buf: bytes, expected_magic: int | None = None) -> np.ndarray:
    """Decode an IDX byte string into an array of the declared shape."""
    if len(buf) < 4:
        raise DataFormatError("truncated IDX header", offset=len(buf))
    magic = struct.unpack(">I", buf[:4])[0]
    if expected_magic is not None and magic != expected_magic:
        raise DataFormatError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    if buf[0] != 0 or buf[1] != 0 or buf[2] not in _IDX_DTYPES:
        raise DataFormatError(f"bad magic 0x{magic:08x}", offset=0)
    dtype = _IDX_DTYPES[buf[2]]
    ndim = buf[3]
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataFormatError("truncated IDX dimension list", offset=len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    end = header + count * dtype.itemsize
    if len(buf) < end:
        raise DataFormatError(f"truncated IDX payload: need {end} bytes, have {len(buf)}", offset=len(buf))
    if len(buf) > end:
        raise DataFormatError(f"{len(buf) - end} trailing bytes after IDX payload", offset=end)
    return np.frombuffer(buf, dtype=dtype, count=count, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write an unsigned-byte IDX file (used for fixtures and round trips)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x00000800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return parse_idx(raw, expected_magic)


def load_mnist(path) -> tuple[DatasetIndex, FederatedData]:
    """Load the four standard MNIST IDX files from a directory; pixels scaled to [0, 1]."""
    root = Path(path)
    arrays = {}
    for key, name in MNIST_FILES.items():
        magic = IMAGES_MAGIC if key.endswith("images") else LABELS_MAGIC
        try:
            arrays[key] = read_idx(root / name, magic)
        except DataFormatError as exc:
            raise DataFormatError(f"{name}: {exc}") from exc
    for split in ("train", "test"):
        if arrays[f"{split}_images"].shape[0] != arrays[f"{split}_labels"].shape[0]:
            raise DataFormatError(f"{split} image and label counts differ")
    x_train = arrays["train_images"].reshape(len(arrays["train_images"]), -1).astype(np.float64) / 255.0
    x_test = arrays["test_images"].reshape(len(arrays["test_images"]), -1).astype(np.float64) / 255.0
    y_train = arrays["train_labels"].astype(np.int64)
    y_test = arrays["test_labels"].astype(np.int64)
    if y_train.max(initial=0) > 9 or y_test.max(initial=0) > 9:
        raise DataFormatError("MNIST labels must lie in [0, 9]")
    index = DatasetIndex(np.arange(len(y_train)), y_train, 10)
    return index, FederatedData(x_train, y_train, 10, x_test, y_test)


def make_blobs(
    num_classes: int = 10,
    dim: int = 32,
    per_class: int = 600,
    spread: float = 1.5,
    center_seed: int = 0,
    seed: int = 0,
    test_fraction: float = 0.2,
) -> tuple[DatasetIndex, FederatedData]:
    """Isotropic Gaussian clusters around standard-normal centers.

    Returns the training index plus features, with a stratified held-out
    test split of ``test_fraction`` per class.
    """
    if num_classes < 2 or spread <= 0:
        raise ValueError("need num_classes >= 2 and spread > 0")
    centers = np.random.default_rng(center_seed).standard_normal((num_classes, dim))
    rng = np.random.default_rng(seed)
    n_test = int(round(test_fraction * per_class))
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(num_classes):
        pts = centers[c] + spread * rng.standard_normal((per_class, dim))
        train_x.append(pts[n_test:])
        test_x.append(pts[:n_test])
        train_y.append(np.full(per_class - n_test, c))
        test_y.append(np.full(n_test, c))
    x = np.concatenate(train_x)
    y = np.concatenate(train_y)
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    index = DatasetIndex(np.arange(len(y)), y, num_classes)
    return index, FederatedData(x, y, num_classes, np.concatenate(test_x), np.concatenate(test_y))


def nearest_centroid_accuracy(x_train, y_train, x_test, y_test, num_classes) -> float:
    centroids = np.stack([x_train[y_train == c].mean(axis=0) for c in range(num_classes)])
    d = ((x_test[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
    return float((d.argmin(axis=1) == y_test).mean())
