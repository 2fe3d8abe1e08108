"""Datasets: the synthetic 1-D regression task, Gaussian blobs and IDX files."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

TARGETS = {
    "2sin_plus_x": lambda x: 2.0 * np.sin(x) + x,
    "sin": np.sin,
    "abs_sin": lambda x: np.abs(np.sin(x)),
}


@dataclass
class Dataset:
    name: str
    task: str  # "regression" or "classification"
    X_train: np.ndarray  # (features, n)
    Y_train: np.ndarray  # targets or one-hot labels, (outputs, n)
    X_test: np.ndarray
    Y_test: np.ndarray
    input_shape: tuple[int, ...]

    @property
    def n_train(self) -> int:
        return self.X_train.shape[1]

    @property
    def loss(self) -> str:
        return "cross_entropy" if self.task == "classification" else "square"


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((classes, labels.size))
    out[labels, np.arange(labels.size)] = 1.0
    return out


def _split(X: np.ndarray, Y: np.ndarray, test_fraction: float, rng: np.random.Generator):
    n = X.shape[1]
    if test_fraction <= 0:
        return X, Y, X, Y
    perm = rng.permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    test, train = perm[:n_test], perm[n_test:]
    return X[:, train], Y[:, train], X[:, test], Y[:, test]


def gen_synthetic_regression(n: int = 4, grid: bool = True, seed: int = 0,
                             target: str = "2sin_plus_x", test_fraction: float = 0.2) -> Dataset:
    """Samples of a 1-D target on [0, 2 pi).

    ``grid`` places ``x_k = 2 pi k / n``; otherwise x is seeded-uniform.
    """
    if n < 1:
        raise DataError("need at least one sample")
    if target not in TARGETS:
        raise DataError(f"unknown target {target!r}; known: {sorted(TARGETS)}")
    rng = np.random.default_rng(seed)
    x = 2.0 * math.pi * np.arange(n) / n if grid else rng.uniform(0.0, 2.0 * math.pi, n)
    X = x.reshape(1, -1)
    Y = TARGETS[target](X)
    Xtr, Ytr, Xte, Yte = _split(X, Y, test_fraction, rng)
    return Dataset(f"regression-{target}", "regression", Xtr, Ytr, Xte, Yte, (1,))


def gen_blobs(n_train: int = 1000, n_test: int = 250, classes: int = 2, dim: int = 2,
              separation: float = 4.0, spread: float = 1.0, seed: int = 0) -> Dataset:
    """Isotropic Gaussian clusters with centres spaced ``separation`` apart on a random line."""
    if n_train < 1 or n_test < 1 or classes < 2:
        raise DataError("blobs need positive counts and at least two classes")
    rng = np.random.default_rng(seed)
    axis = rng.standard_normal(dim)
    axis /= np.linalg.norm(axis)
    offsets = (np.arange(classes) - (classes - 1) / 2.0) * separation
    centres = offsets[:, None] * axis[None, :]
    n = n_train + n_test
    labels = rng.integers(0, classes, n)
    X = (centres[labels] + spread * rng.standard_normal((n, dim))).T
    Y = one_hot(labels, classes)
    return Dataset("blobs", "classification", X[:, :n_train], Y[:, :n_train],
                   X[:, n_train:], Y[:, n_train:], (dim,))


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """``(count, rows, cols)`` uint8 array from an IDX image file."""
    path = Path(path)
    try:
        with _open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16:
        raise DataError(f"{path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataError(f"{path}: bad magic 0x{magic:08x} for images")
    body = raw[16:]
    if len(body) != count * rows * cols:
        raise DataError(f"{path}: expected {count * rows * cols} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    path = Path(path)
    try:
        with _open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 8:
        raise DataError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataError(f"{path}: bad magic 0x{magic:08x} for labels")
    body = raw[8:]
    if len(body) != count:
        raise DataError(f"{path}: expected {count} labels, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).copy()


def write_idx(images: np.ndarray | None, labels: np.ndarray | None, image_path=None, label_path=None) -> None:
    """Write IDX files (used for fixtures and tests)."""
    if images is not None:
        images = np.asarray(images, dtype=np.uint8)
        count, rows, cols = images.shape
        with open(image_path, "wb") as fh:
            fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
            fh.write(images.tobytes())
    if labels is not None:
        labels = np.asarray(labels, dtype=np.uint8)
        with open(label_path, "wb") as fh:
            fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
            fh.write(labels.tobytes())


def load_idx(image_path, label_path, limit: int | None = None) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    """Pixels scaled to [0, 1] as ``(rows*cols, n)`` plus integer labels."""
    images = read_idx_images(image_path)
    labels = read_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    X = images.reshape(images.shape[0], -1).T.astype(np.float64) / 255.0
    return X, labels.astype(np.int64), images.shape[1:]


def idx_dataset(train_images, train_labels, test_images, test_labels, limit: int | None = None,
                classes: int | None = None) -> Dataset:
    Xtr, ltr, hw = load_idx(train_images, train_labels, limit)
    Xte, lte, hw2 = load_idx(test_images, test_labels, limit)
    if hw != hw2:
        raise DataError("train and test images differ in size")
    k = classes or int(max(ltr.max(initial=0), lte.max(initial=0)) + 1)
    return Dataset("idx", "classification", Xtr, one_hot(ltr, k), Xte, one_hot(lte, k),
                   (int(np.prod(hw)),))


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "yes"):
        return True
    if low in ("false", "no"):
        return False
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def parse_data_spec(spec: str) -> Dataset:
    """Build a dataset from ``kind:key=value,...``.

    Kinds: ``regression`` (n, grid, seed, target, test_fraction), ``blobs``
    (n_train, n_test, classes, dim, separation, spread, seed) and ``idx``
    (train_images, train_labels, test_images, test_labels, limit).
    """
    kind, _, rest = spec.partition(":")
    params = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise DataError(f"malformed data option {item!r}")
        params[key.strip()] = _coerce(value.strip())
    return make_dataset(kind.strip(), params)


def make_dataset(kind: str, params: dict) -> Dataset:
    try:
        if kind in ("regression", "synthetic_regression"):
            return gen_synthetic_regression(**params)
        if kind == "blobs":
            return gen_blobs(**params)
        if kind in ("idx", "idx_files"):
            return idx_dataset(**params)
    except TypeError as exc:
        raise DataError(f"bad options for {kind}: {exc}") from exc
    raise DataError(f"unknown dataset kind {kind!r}")
