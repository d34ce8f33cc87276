"""Datasets: synthetic 2-D Gaussians, MNIST IDX files, noise corruption, splits."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CountMismatchError, DataError, ParameterError, TruncatedFileError
from .tensor import Rng, Tensor, rng_normal

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class Dataset:
    inputs: Tensor
    labels: np.ndarray
    split: str = "train"
    n_classes: int | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx, split: str | None = None) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], split or self.split, self.n_classes)

    def to_csv(self, header_comment: str | None = None) -> str:
        """``x1, x2, label`` rows; only meaningful for 2-D feature vectors."""
        if self.inputs.ndim != 2 or self.inputs.shape[1] != 2:
            raise DataError(f"CSV export needs 2-D points, inputs have shape {self.inputs.shape}")
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x1", "x2", "label"])
        for (a, b), y in zip(self.inputs.tolist(), self.labels.tolist()):
            w.writerow([repr(a), repr(b), y])
        return buf.getvalue()


def gen_two_gaussians(mean0, mean1, cov0, cov1, n_per_class: int, rng: Rng) -> Dataset:
    """``n_per_class`` points from each of two 2-D Gaussians (class 0 first).

    Samples are ``mean + L z`` with ``L`` the Cholesky factor of the
    covariance and ``z`` drawn row-major from ``rng``.
    """
    if n_per_class < 1:
        raise ParameterError(f"n_per_class must be >= 1, got {n_per_class}")
    parts = []
    for mean, cov in ((mean0, cov0), (mean1, cov1)):
        mean = np.asarray(mean, dtype=np.float64)
        cov = np.asarray(cov, dtype=np.float64)
        if mean.shape != (2,) or cov.shape != (2, 2):
            raise ParameterError(f"expected a 2-vector mean and 2x2 covariance, got {mean.shape}, {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-15 * max(1.0, np.abs(cov).max())):
            raise ParameterError(f"covariance is not symmetric: {cov.tolist()}")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ParameterError(f"covariance is not positive definite: {cov.tolist()}") from None
        z = rng.normal(2 * n_per_class).reshape(n_per_class, 2)
        parts.append(mean + z @ chol.T)
    labels = np.repeat([0, 1], n_per_class)
    return Dataset(np.concatenate(parts), labels, "train", 2)


# -- IDX ---------------------------------------------------------------------

def _read_header(raw: bytes, path, expected_magic: int, ndim: int):
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:end])
    size = int(np.prod(dims))
    if len(raw) - end < size:
        raise TruncatedFileError(f"{path}: expected {size} data bytes, found {len(raw) - end}")
    return dims, np.frombuffer(raw, dtype=np.uint8, count=size, offset=end)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1]."""
    img_raw = Path(images_path).read_bytes()
    lab_raw = Path(labels_path).read_bytes()
    (n, rows, cols), pixels = _read_header(img_raw, images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,), labels = _read_header(lab_raw, labels_path, IDX_LABELS_MAGIC, 1)
    if n != n_labels:
        raise CountMismatchError(f"{images_path} has {n} images but {labels_path} has {n_labels} labels")
    images = pixels.reshape(n, 1, rows, cols).astype(np.float64) / 255.0
    return Dataset(images, labels.astype(np.int64), split, 10)


def write_idx(d: Dataset, images_path, labels_path) -> None:
    """Write images (values in [0, 1], rounded to 8 bits) and labels as IDX."""
    x = d.inputs
    if x.ndim == 4:
        x = x[:, 0]
    if x.ndim != 3:
        raise DataError(f"IDX images need shape (n, rows, cols), got {d.inputs.shape}")
    pixels = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
    n, rows, cols = pixels.shape
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, n) + d.labels.astype(np.uint8).tobytes())


def load_mnist(directory, split: str) -> Dataset:
    """Load ``train`` or ``test`` from a directory holding the standard four files."""
    directory = Path(directory)
    prefix = "train" if split == "train" else "test"
    images = directory / MNIST_FILES[f"{prefix}_images"]
    labels = directory / MNIST_FILES[f"{prefix}_labels"]
    for p in (images, labels):
        if not p.exists():
            raise DataError(f"missing MNIST file {p}")
    return load_idx(images, labels, split)


# -- transforms --------------------------------------------------------------

def add_gaussian_noise(d: Dataset, std: float, rng: Rng) -> Dataset:
    """A copy of ``d`` with i.i.d. N(0, std^2) added to every input value (no clipping)."""
    if std < 0 or not np.isfinite(std):
        raise ParameterError(f"noise std must be finite and >= 0, got {std}")
    if std == 0:
        return replace(d, inputs=d.inputs.copy(), labels=d.labels.copy())
    noise = rng_normal(rng, 0.0, std, d.inputs.size).reshape(d.inputs.shape)
    return replace(d, inputs=d.inputs + noise, labels=d.labels.copy())


def split_validation(d: Dataset, n_val: int, rng: Rng) -> tuple[Dataset, Dataset]:
    """Seeded shuffle; the last ``n_val`` shuffled examples form the validation set."""
    n = len(d)
    if not 0 <= n_val < n:
        raise ParameterError(f"n_val must satisfy 0 <= n_val < {n}, got {n_val}")
    if n_val == 0:
        return d, d.subset(np.arange(0), "val")
    order = rng.permutation(n)
    return d.subset(order[: n - n_val], "train"), d.subset(order[n - n_val:], "val")


def random_subset(d: Dataset, size: int | None, rng: Rng) -> Dataset:
    """First ``size`` examples of a seeded shuffle; ``None`` keeps everything."""
    if size is None or size >= len(d):
        return d
    if size < 1:
        raise ParameterError(f"subset size must be >= 1, got {size}")
    return d.subset(np.sort(rng.permutation(len(d))[:size]))
