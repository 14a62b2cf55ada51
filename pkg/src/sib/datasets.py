"""MNIST IDX files and synthetic Gaussian channels with known I(C; Z)."""

from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.special import logsumexp

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_ENV = "SIB_DATA_ROOT"


class IdxError(ValueError):
    pass


@dataclass(frozen=True)
class LabelEntropy:
    h_y: float
    n_classes: int

    @classmethod
    def from_labels(cls, labels: np.ndarray, n_classes: int) -> "LabelEntropy":
        p = np.bincount(labels, minlength=n_classes) / len(labels)
        p = p[p > 0]
        return cls(float(-np.sum(p * np.log(p))), n_classes)


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) == 0 or len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels must be non-empty and equally long")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError(f"labels outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def label_entropy(self) -> LabelEntropy:
        return LabelEntropy.from_labels(self.labels, self.n_classes)

    @property
    def h_y(self) -> float:
        return self.label_entropy.h_y

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.n_classes, self.split, self.meta)


# -- IDX ---------------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, magic: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise IdxError(f"{path}: truncated header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise IdxError(f"{path}: wrong magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = got & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n = int(np.prod(dims))
    if len(raw) - header < n:
        raise IdxError(f"{path}: truncated file, expected {n} bytes of data, got {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> Path:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    payload = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(payload)
    return path


def load_mnist_idx(images_path, labels_path, split: str = "train") -> LabeledDataset:
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[1:] != (28, 28):
        raise IdxError(f"{images_path}: expected 28x28 images, got {images.shape[1:]}")
    if len(images) != len(labels):
        raise IdxError(f"count mismatch: {len(images)} images vs {len(labels)} labels")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return LabeledDataset(x, labels.astype(np.int64), 10, split, {"source": str(images_path)})


def find_mnist(root=None) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the train/test pair from ``root`` (or ``$SIB_DATA_ROOT``)."""
    root = Path(root or os.environ.get(DATA_ENV) or Path(__file__).resolve().parents[2] / "data" / "mnist")
    out = []
    for split, prefix in (("train", "train"), ("test", "t10k")):
        for suffix in (".gz", ""):
            img = root / f"{prefix}-images-idx3-ubyte{suffix}"
            lab = root / f"{prefix}-labels-idx1-ubyte{suffix}"
            if img.exists() and lab.exists():
                out.append(load_mnist_idx(img, lab, split))
                break
        else:
            raise FileNotFoundError(f"no {prefix} IDX files under {root}")
    return out[0], out[1]


# -- synthetic Gaussian channel ------------------------------------------------

def channel_mi(means: np.ndarray, noise_var: float, order: int = 80) -> float:
    """I(C; Z) for Z = m_C + N(0, s^2 I), C uniform, by Gauss-Hermite quadrature.

    Written as the average over classes of E[log(C p(z|c) / sum_c' p(z|c'))].
    """
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    c, d = means.shape
    if d > 3:
        raise ValueError("quadrature is only set up for up to 3 dimensions")
    nodes, wts = np.polynomial.hermite_e.hermegauss(order)
    wts = wts / wts.sum()
    grid = np.stack(np.meshgrid(*[nodes] * d, indexing="ij"), -1).reshape(-1, d)
    gw = np.prod(np.stack(np.meshgrid(*[wts] * d, indexing="ij"), -1).reshape(-1, d), axis=1)
    s = np.sqrt(noise_var)
    total = 0.0
    for k in range(c):
        z = means[k] + s * grid
        sq = ((z[:, None, :] - means[None, :, :]) ** 2).sum(-1) / (2 * noise_var)
        logratio = np.log(c) - sq[:, k] - logsumexp(-sq, axis=1)
        total += np.dot(gw, logratio)
    return float(max(total / c, 0.0))


@dataclass
class SyntheticChannelSpec:
    means: np.ndarray
    noise_var: float
    mi: float = field(init=False)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if self.noise_var <= 0:
            raise ValueError("noise_var must be positive")
        self.mi = channel_mi(self.means, self.noise_var)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_json(self, seed: int | None = None) -> str:
        return json.dumps({"means": self.means.tolist(), "noise_var": self.noise_var,
                           "mi_nats": self.mi, "seed": seed})

    @classmethod
    def from_json(cls, text: str) -> "SyntheticChannelSpec":
        d = json.loads(text)
        return cls(np.array(d["means"]), d["noise_var"])


def make_synthetic_channel(spec: SyntheticChannelSpec, n: int, rng: np.random.Generator,
                           split: str = "train") -> LabeledDataset:
    if n < spec.n_classes:
        raise ValueError("need at least one sample per class")
    labels = rng.integers(0, spec.n_classes, n)
    x = spec.means[labels] + np.sqrt(spec.noise_var) * rng.standard_normal((n, spec.dim))
    return LabeledDataset(x, labels, spec.n_classes, split, {"channel_mi": spec.mi})


def batches(data: LabeledDataset, batch_size: int, rng: np.random.Generator,
            drop_last: bool = True) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    if batch_size < 2:
        raise ValueError("batch_size must be at least 2")
    order = rng.permutation(len(data))
    stop = len(order) - len(order) % batch_size if drop_last else len(order)
    for lo in range(0, stop, batch_size):
        idx = order[lo:lo + batch_size]
        yield data.inputs[idx], data.labels[idx]
