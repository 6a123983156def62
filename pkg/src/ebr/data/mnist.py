"""MNIST loading.

Standard IDX files are used when a directory holding them is given (or set in
``EBR_MNIST_DIR``). Without them, the 5,000-image MNIST subset bundled with
``mlxtend`` is converted to IDX once and split into train/test parts.
"""
from __future__ import annotations

import gzip
import io
import os
from pathlib import Path

import numpy as np

from ..core.tensor import rng
from .io import load_idx, write_idx

__all__ = ["load_mnist", "find_idx_dir", "bundled_subset_dir"]

_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def _locate(directory: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = directory / name
        if p.exists():
            return p
    return None


def find_idx_dir(directory=None) -> Path | None:
    directory = directory or os.environ.get("EBR_MNIST_DIR")
    if not directory:
        return None
    d = Path(directory)
    if all(_locate(d, s) for s in _NAMES.values()):
        return d
    return None


def bundled_subset_dir(cache=None, n_test: int = 1000, seed: int = 0) -> Path:
    """Write the mlxtend subset as IDX files (shuffled, last ``n_test`` as test)."""
    cache = Path(cache or os.environ.get("EBR_CACHE", Path.home() / ".cache" / "ebr")) / "mnist-subset"
    if find_idx_dir(cache):
        return cache
    try:
        import mlxtend.data
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise FileNotFoundError(
            "no MNIST IDX files found; set EBR_MNIST_DIR or install mlxtend") from exc
    path = Path(mlxtend.data.__file__).parent / "data" / "mnist_5k.csv.gz"
    table = np.loadtxt(io.StringIO(gzip.decompress(path.read_bytes()).decode()), delimiter=",")
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    order = rng(seed, 0x3D1).permutation(len(images))
    images, labels = images[order], labels[order]
    split = len(images) - n_test
    cache.mkdir(parents=True, exist_ok=True)
    write_idx(cache / _NAMES["train_images"], images[:split])
    write_idx(cache / _NAMES["train_labels"], labels[:split])
    write_idx(cache / _NAMES["test_images"], images[split:])
    write_idx(cache / _NAMES["test_labels"], labels[split:])
    return cache


def load_mnist(directory=None, n_train: int | None = 5000, n_test: int | None = 1000):
    """Return ``(x_train, y_train, x_test, y_test)``; images ``(n, 28, 28, 1)`` float32.

    The first ``n_train`` / ``n_test`` images are kept (``None`` keeps all).
    """
    d = find_idx_dir(directory) or bundled_subset_dir()
    parts = {k: load_idx(_locate(d, s)) for k, s in _NAMES.items()}
    xtr, ytr = parts["train_images"][:n_train, ..., None], parts["train_labels"][:n_train]
    xte, yte = parts["test_images"][:n_test, ..., None], parts["test_labels"][:n_test]
    return xtr, ytr, xte, yte
