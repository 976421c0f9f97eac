"""Datasets: the noisy sine toy problem, IDX image files, resampling and subsets."""
from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FormatError, InputError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

IN_DISTRIBUTION = "in_distribution"
OUT_OF_DISTRIBUTION = "out_of_distribution"


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    task: str
    distribution_tag: str = IN_DISTRIBUTION
    name: str = ""
    n_classes: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        labels = np.asarray(self.labels)
        if self.task == "classification":
            labels = labels.astype(np.int64)
        else:
            labels = labels.astype(np.float64)
        self.labels = labels
        if len(self.features) != len(self.labels):
            raise InputError(
                f"{self.name or 'dataset'}: {len(self.features)} feature rows but {len(self.labels)} labels"
            )
        if self.task == "classification" and self.labels.size:
            if self.n_classes is None:
                self.n_classes = int(self.labels.max()) + 1
            if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
                raise InputError(f"{self.name or 'dataset'}: labels outside [0, {self.n_classes - 1}]")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.features[idx], self.labels[idx], self.task, self.distribution_tag,
                       name or self.name, self.n_classes, dict(self.meta))


# ---------------------------------------------------------------------------
# toy regression


@dataclass
class ToyConfig:
    x_min: float = -3.0
    x_max: float = 3.0
    step: float = 0.001
    sigma_neg: float = 3.0
    sigma_pos: float = 1.0
    amplitude: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError(f"toy.step: must be > 0, got {self.step}")
        if not self.x_min < self.x_max:
            raise ConfigError(f"toy.x_min ({self.x_min}) must be < toy.x_max ({self.x_max})")
        if self.sigma_neg < 0 or self.sigma_pos < 0:
            raise ConfigError("toy.sigma_neg / toy.sigma_pos: must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ToyConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown config key toy.{key!r}")
        return cls(**d)


def grid(start: float, stop: float, step: float) -> np.ndarray:
    """``start + i*step`` for every ``i`` with the point not past ``stop``.

    Built from integer indices so 6001 steps accumulate no drift; a relative
    slack of 1e-9 step keeps an endpoint that float division lands just short of.
    """
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    if n < 1:
        return np.empty(0)
    return start + np.arange(n) * step


def toy_truth(x, amplitude: float = 10.0) -> np.ndarray:
    return amplitude * np.sin(np.asarray(x, dtype=np.float64))


def toy_generate(cfg: ToyConfig | None = None) -> tuple[Dataset, np.ndarray]:
    """Noisy ``amplitude*sin(x)`` on the grid; noise std ``sigma_neg`` for x<0, ``sigma_pos`` for x>=0.

    Returns the dataset and the noise-free targets.
    """
    cfg = cfg or ToyConfig()
    x = grid(cfg.x_min, cfg.x_max, cfg.step)
    truth = toy_truth(x, cfg.amplitude)
    rng = np.random.default_rng(cfg.seed)
    sigma = np.where(x < 0, cfg.sigma_neg, cfg.sigma_pos)
    y = truth + rng.standard_normal(x.size) * sigma
    ds = Dataset(x[:, None], y, "regression", IN_DISTRIBUTION, "toy")
    return ds, truth


def toy_ood(cfg: ToyConfig | None, delta: float, x_hi: float) -> Dataset:
    """Noise-free grid on ``[x_max + delta, x_hi]``, tagged out-of-distribution."""
    cfg = cfg or ToyConfig()
    if not delta > 0:
        raise ConfigError(f"delta: must be > 0, got {delta}")
    lo = cfg.x_max + delta
    if not x_hi > lo:
        raise ConfigError(f"x_hi ({x_hi}) must exceed x_max + delta ({lo}); the range is empty")
    x = grid(lo, x_hi, cfg.step)
    return Dataset(x[:, None], toy_truth(x, cfg.amplitude), "regression", OUT_OF_DISTRIBUTION, "toy_ood")


def write_toy_csv(path, ds: Dataset, truth) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "y_true"])
        for x, y, t in zip(ds.features[:, 0], ds.labels, truth):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(t))])
    return path


# ---------------------------------------------------------------------------
# IDX files


def _read_idx(path, expected_magic: int) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header
    if payload != expected:
        raise FormatError(f"{path}: payload length {payload} does not match dims {dims} ({expected} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def idx_load(images_path, labels_path, name: str = "", tag: str = IN_DISTRIBUTION,
             n_classes: int | None = None) -> Dataset:
    """Load an IDX image/label pair; pixels are flattened row-major and scaled by 1/255."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise InputError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    n, rows, cols = images.shape
    features = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    ds = Dataset(features, labels.astype(np.int64), "classification", tag,
                 name or Path(images_path).name, n_classes)
    ds.meta.update(rows=rows, cols=cols)
    return ds


def idx_write(images_path, labels_path, images, labels) -> None:
    """Write uint8 images (N x rows x cols) and labels (N) as an IDX pair."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 3:
        raise InputError(f"images must be N x rows x cols, got shape {images.shape}")
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise InputError("IDX images and labels must be uint8")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(np.ascontiguousarray(images).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(np.ascontiguousarray(labels).tobytes())


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def data_root(explicit=None) -> Path | None:
    root = explicit or os.environ.get("DEN_DATA_DIR")
    return Path(root) if root else None


def find_idx_pair(root, subdir: str, split: str) -> tuple[Path, Path] | None:
    """Locate MNIST-style IDX files under ``root/subdir`` (plain names only)."""
    if root is None:
        return None
    base = Path(root) / subdir
    images, labels = (base / f for f in MNIST_FILES[split])
    if images.exists() and labels.exists():
        return images, labels
    return None


# ---------------------------------------------------------------------------
# synthetic image-like classification


def synthetic_classification(n_per_class: int, n_classes: int = 10, side: int = 28,
                             seed: int = 0, noise: float = 0.1, name: str = "synthetic") -> Dataset:
    """MNIST-shaped stand-in: each class is a fixed pattern of bright strokes.

    Samples jitter the pattern by up to two pixels, scale its intensity and add
    pixel noise; features stay in [0, 1]. Class patterns depend only on
    ``n_classes`` and ``side``, so train and test sets drawn with different
    seeds share them.
    """
    proto_rng = np.random.default_rng([n_classes, side, 424242])
    protos = np.zeros((n_classes, side, side))
    yy, xx = np.mgrid[0:side, 0:side]
    for c in range(n_classes):
        for _ in range(4):
            cy, cx = proto_rng.uniform(side * 0.25, side * 0.75, size=2)
            angle = proto_rng.uniform(0, np.pi)
            length = proto_rng.uniform(side * 0.15, side * 0.35)
            # distance from each pixel to a line segment through (cy, cx)
            dy, dx = np.sin(angle), np.cos(angle)
            t = np.clip((yy - cy) * dy + (xx - cx) * dx, -length, length)
            d2 = (yy - cy - t * dy) ** 2 + (xx - cx - t * dx) ** 2
            protos[c] = np.maximum(protos[c], np.exp(-d2 / 2.0))
    rng = np.random.default_rng(seed)
    n = n_per_class * n_classes
    labels = np.repeat(np.arange(n_classes), n_per_class)
    images = np.empty((n, side, side))
    shifts = rng.integers(-2, 3, size=(n, 2))
    gains = rng.uniform(0.7, 1.0, size=n)
    for i in range(n):
        img = np.roll(protos[labels[i]], tuple(shifts[i]), axis=(0, 1))
        images[i] = img * gains[i]
    images += rng.normal(0.0, noise, size=images.shape)
    features = np.clip(images.reshape(n, side * side), 0.0, 1.0)
    order = rng.permutation(n)
    return Dataset(features[order], labels[order], "classification", IN_DISTRIBUTION, name, n_classes)


def synthetic_ood(n: int, dim: int = 784, seed: int = 0) -> Dataset:
    """Uniform-noise images in [0, 1]; no labels carried, tagged out-of-distribution."""
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.uniform(0.0, 1.0, size=(n, dim)), np.zeros(n, dtype=np.int64),
                 "classification", OUT_OF_DISTRIBUTION, "uniform_noise")
    ds.meta["unlabelled"] = True
    return ds


# ---------------------------------------------------------------------------
# resampling


def resample_indices(n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise InputError("cannot resample an empty dataset")
    return np.random.default_rng(seed).integers(0, n, size=n)


def resample_with_replacement(ds: Dataset, seed: int) -> Dataset:
    """Size-N draw with replacement, deterministic in ``seed``."""
    return ds.take(resample_indices(len(ds), seed), name=f"{ds.name}[bootstrap {seed}]")


def subset(ds: Dataset, n: int | None = None, seed: int = 0, n_per_class: int | None = None) -> Dataset:
    """Seeded subsample: ``n_per_class`` per class (classification) or ``n`` uniformly."""
    rng = np.random.default_rng(seed)
    if n_per_class is not None:
        if ds.task != "classification":
            raise InputError("n_per_class only applies to classification datasets")
        picks = []
        for c in range(ds.n_classes):
            members = np.flatnonzero(ds.labels == c)
            if len(members) < n_per_class:
                raise InputError(f"class {c} has {len(members)} samples, {n_per_class} requested")
            picks.append(rng.choice(members, size=n_per_class, replace=False))
        idx = np.concatenate(picks)
        return ds.take(rng.permutation(idx))
    if n is None:
        raise InputError("subset needs n or n_per_class")
    if n > len(ds):
        raise InputError(f"requested {n} samples from a dataset of {len(ds)}")
    return ds.take(rng.choice(len(ds), size=n, replace=False))


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction: must be in (0, 1), got {test_fraction}")
    order = np.random.default_rng(seed).permutation(len(ds))
    n_test = int(round(len(ds) * test_fraction))
    return ds.take(np.sort(order[n_test:])), ds.take(np.sort(order[:n_test]))
