import gzip

import numpy as np
import pytest

from lutlearn.data import (IMAGE_MAGIC, LABEL_MAGIC, MNIST_FILES, default_mnist_dir, load_mnist, read_idx, synthetic,
                           write_idx)
from lutlearn.errors import FormatError


def _fake_mnist(root, n_train=30, n_test=10, gz=False, seed=0):
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    data = {
        "train_images": rng.integers(0, 256, size=(n_train, 28, 28)),
        "train_labels": rng.integers(0, 10, size=n_train),
        "test_images": rng.integers(0, 256, size=(n_test, 28, 28)),
        "test_labels": rng.integers(0, 10, size=n_test),
    }
    for key, arr in data.items():
        path = root / MNIST_FILES[key]
        write_idx(path, arr)
        if gz:
            blob = path.read_bytes()
            path.unlink()
            (root / (MNIST_FILES[key] + ".gz")).write_bytes(gzip.compress(blob))
    return data


def test_idx_roundtrip(tmp_path):
    a = np.arange(24).reshape(2, 3, 4)
    write_idx(tmp_path / "x", a)
    assert np.array_equal(read_idx(tmp_path / "x", IMAGE_MAGIC), a)
    with pytest.raises(FormatError):
        read_idx(tmp_path / "x", LABEL_MAGIC)


def test_truncated_idx(tmp_path):
    (tmp_path / "x").write_bytes(b"\x00\x00\x08")
    with pytest.raises(FormatError):
        read_idx(tmp_path / "x", IMAGE_MAGIC)


@pytest.mark.parametrize("gz", [False, True])
def test_load_mnist(tmp_path, gz):
    raw = _fake_mnist(tmp_path, gz=gz)
    ds = load_mnist(tmp_path, seed=None)
    assert ds.x_train.shape == (30, 784) and ds.x_test.shape == (10, 784)
    assert ds.x_train.min() >= -1 and ds.x_train.max() <= 1
    assert np.allclose(ds.x_test, raw["test_images"].reshape(10, -1) / 127.5 - 1)
    assert load_mnist(tmp_path, flatten=False).x_train.shape == (30, 28, 28, 1)


def test_shuffle_is_seeded(tmp_path):
    _fake_mnist(tmp_path)
    a, b, c = (load_mnist(tmp_path, seed=s) for s in (1, 1, 2))
    assert np.array_equal(a.y_train, b.y_train)
    assert not np.array_equal(a.x_train, c.x_train)
    assert np.array_equal(a.x_test, c.x_test)


def test_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mnist(tmp_path / "nope")


def test_default_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("LUTLEARN_MNIST", str(tmp_path))
    assert default_mnist_dir() == tmp_path


def test_synthetic_deterministic():
    a, b = synthetic(50, 20, seed=4), synthetic(50, 20, seed=4)
    assert np.array_equal(a.x_train, b.x_train) and a.n_classes == 10
    assert a.subset(10, 5).x_train.shape == (10, 64)


def test_full_mnist_record_counts():
    root = default_mnist_dir()
    if root is None or not (root / MNIST_FILES["train_labels"]).exists() and \
            not (root / (MNIST_FILES["train_labels"] + ".gz")).exists():
        pytest.skip("full MNIST not available")
    ds = load_mnist(root)
    assert (len(ds.y_train), len(ds.y_test)) == (60000, 10000)
