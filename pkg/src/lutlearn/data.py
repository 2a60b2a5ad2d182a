"""Datasets: MNIST in IDX format and a synthetic generator for quick runs."""
from __future__ import annotations

import gzip
import os
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
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    name: str = "dataset"

    @property
    def input_shape(self) -> tuple:
        return tuple(self.x_train.shape[1:])

    @property
    def n_classes(self) -> int:
        return int(max(self.y_train.max(initial=0), self.y_test.max(initial=0)) + 1)

    def subset(self, n_train: int | None = None, n_test: int | None = None) -> "Dataset":
        return Dataset(self.x_train[:n_train], self.y_train[:n_train], self.x_test[:n_test], self.y_test[:n_test],
                       self.name)


def _open(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, magic: int) -> np.ndarray:
    """Read an unsigned-byte IDX file, checking its big-endian magic number."""
    path = Path(path)
    with _open(path) as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise FormatError(f"{path}: truncated header")
        (got,) = struct.unpack(">I", head)
        if got != magic:
            raise FormatError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
        ndim = got & 0xFF
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise FormatError(f"{path}: expected {int(np.prod(dims))} bytes of data, found {data.size}")
    return data.reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def _find(root: Path, stem: str) -> Path:
    for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        if (root / cand).exists():
            return root / cand
    raise FileNotFoundError(f"{stem} not found under {root}")


def normalize(images: np.ndarray) -> np.ndarray:
    """Map bytes 0..255 to [-1, 1]."""
    return images.astype(np.float64) / 127.5 - 1.0


def shuffle(x: np.ndarray, y: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(len(x))
    return x[perm], y[perm]


def load_mnist(path, seed: int | None = 0, flatten: bool = True) -> Dataset:
    """Load the four MNIST IDX files (optionally gzipped) from ``path``."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"MNIST directory {root} does not exist")
    arrs = {}
    for key, stem in MNIST_FILES.items():
        arrs[key] = read_idx(_find(root, stem), IMAGE_MAGIC if key.endswith("images") else LABEL_MAGIC)
    for split in ("train", "test"):
        if len(arrs[f"{split}_images"]) != len(arrs[f"{split}_labels"]):
            raise FormatError(f"{split} image and label counts differ")
    xs = {s: normalize(arrs[f"{s}_images"]) for s in ("train", "test")}
    if flatten:
        xs = {s: v.reshape(len(v), -1) for s, v in xs.items()}
    else:
        xs = {s: v[..., None] for s, v in xs.items()}
    ys = {s: arrs[f"{s}_labels"].astype(np.int64) for s in ("train", "test")}
    if seed is not None:
        xs["train"], ys["train"] = shuffle(xs["train"], ys["train"], seed)
    return Dataset(xs["train"], ys["train"], xs["test"], ys["test"], name="mnist")


def default_mnist_dir() -> Path | None:
    """$LUTLEARN_MNIST, else ./data/mnist when present."""
    env = os.environ.get("LUTLEARN_MNIST")
    if env:
        return Path(env)
    here = Path("data/mnist")
    return here if here.is_dir() else None


def synthetic(n_train: int = 2000, n_test: int = 500, shape=(64,), n_classes: int = 10, noise: float = 0.35,
              seed: int = 0) -> Dataset:
    """Noisy class prototypes in [-1, 1]; learnable but not trivially separable."""
    if n_classes < 2:
        raise ConfigError("need at least two classes")
    rng = np.random.default_rng(seed)
    dim = int(np.prod(shape))
    protos = rng.choice([-1.0, 1.0], size=(n_classes, dim))

    def draw(n):
        y = rng.integers(0, n_classes, size=n)
        flip = rng.random((n, dim)) < noise
        x = np.where(flip, -protos[y], protos[y]) * rng.uniform(0.3, 1.0, size=(n, dim))
        return x.reshape((n,) + tuple(shape)), y

    xtr, ytr = draw(n_train)
    xte, yte = draw(n_test)
    return Dataset(xtr, ytr, xte, yte, name="synthetic")


def digits(seed: int = 0, test_fraction: float = 0.25, image: bool = True) -> Dataset:
    """scikit-learn's bundled 8x8 digits, scaled to [-1, 1] (optional dependency)."""
    from sklearn.datasets import load_digits

    d = load_digits()
    x = d.images / 8.0 - 1.0
    x = x[..., None] if image else x.reshape(len(x), -1)
    y = d.target.astype(np.int64)
    x, y = shuffle(x, y, seed)
    n_test = int(len(x) * test_fraction)
    return Dataset(x[n_test:], y[n_test:], x[:n_test], y[:n_test], name="digits")
