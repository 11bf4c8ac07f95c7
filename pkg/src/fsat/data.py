"""Dataset ingestion: CIFAR-10 binary batches, cropped SVHN, and a
procedurally generated shapes dataset that needs no downloads.

All loaders return images as (N, 3, 32, 32) float64 in [0, 1] with
int64 labels, in deterministic order.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

__all__ = ["DatasetSpec", "DatasetError", "load_dataset", "generate_shapes", "class_count"]

RECORD_BYTES = 3073  # CIFAR-10 binary: 1 label byte + 3*1024 channel-planar pixels
SHAPE_CLASSES = ("disk", "square", "triangle", "ring", "cross", "diamond", "stripes", "checker")

# Fraction of images whose base hue is drawn from the class-conditional
# band rather than uniformly; gives style features class signal the way
# natural photographs do, without making color alone decisive.
COLOR_BIAS = 0.6


class DatasetError(IOError):
    """Missing, truncated, or malformed dataset input."""


@dataclass(frozen=True)
class DatasetSpec:
    """Which data to load and how much of it."""

    name: str = "synthetic-shapes"
    root: str = ""
    split: str = "train"
    subset_size: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.name not in ("cifar10", "svhn-cropped", "synthetic-shapes"):
            raise DatasetError(f"unknown dataset '{self.name}'")
        if self.split not in ("train", "test"):
            raise DatasetError(f"unknown split '{self.split}'")


def class_count(name: str) -> int:
    return 8 if name == "synthetic-shapes" else 10


def load_dataset(spec: DatasetSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Load ``spec`` as (images, labels)."""
    if spec.name == "cifar10":
        images, labels = _load_cifar10(Path(spec.root), spec.split)
    elif spec.name == "svhn-cropped":
        images, labels = _load_svhn(Path(spec.root), spec.split)
    else:
        n = spec.subset_size if spec.subset_size else (5000 if spec.split == "train" else 1000)
        seed = spec.seed * 2 + (0 if spec.split == "train" else 1)
        return generate_shapes(n, seed=seed)
    if spec.subset_size:
        images, labels = images[: spec.subset_size], labels[: spec.subset_size]
    return images, labels


# -- CIFAR-10 binary batches -------------------------------------------------


def _parse_cifar_file(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    if not path.exists():
        raise DatasetError(f"missing dataset file: {path}")
    raw = path.read_bytes()
    if len(raw) == 0 or len(raw) % RECORD_BYTES != 0:
        complete = len(raw) - (len(raw) % RECORD_BYTES)
        raise DatasetError(
            f"truncated CIFAR-10 file {path}: {len(raw)} bytes, record boundary at byte {complete}"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        bad = int(np.argmax(labels > 9))
        raise DatasetError(
            f"corrupt CIFAR-10 file {path}: label {labels[bad]} at byte {bad * RECORD_BYTES}"
        )
    pixels = records[:, 1:].reshape(-1, 3, 32, 32)  # channel-planar, row-major
    return pixels.astype(np.float64) / 255.0, labels


def _load_cifar10(root: Path, split: str) -> Tuple[np.ndarray, np.ndarray]:
    if split == "test":
        return _parse_cifar_file(root / "test_batch.bin")
    parts = [_parse_cifar_file(root / f"data_batch_{i}.bin") for i in range(1, 6)]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    return images, labels


# -- SVHN (cropped digits, .mat containers) ----------------------------------


def _load_svhn(root: Path, split: str) -> Tuple[np.ndarray, np.ndarray]:
    from scipy.io import loadmat

    path = root / f"{split}_32x32.mat"
    if not path.exists():
        raise DatasetError(f"missing dataset file: {path}")
    mat = loadmat(str(path))
    x = mat["X"]  # (32, 32, 3, N) uint8
    y = mat["y"].ravel().astype(np.int64)
    y[y == 10] = 0
    images = x.transpose(3, 2, 0, 1).astype(np.float64) / 255.0
    return images, y


# -- synthetic shapes --------------------------------------------------------


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))


def _shape_mask(cls: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    dist = np.sqrt(dy * dy + dx * dx)
    if cls == 0:  # disk
        return dist <= r
    if cls == 1:  # square
        return np.maximum(np.abs(dy), np.abs(dx)) <= r * 0.82
    if cls == 2:  # triangle pointing up
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) * 0.55)
    if cls == 3:  # ring
        return (dist <= r) & (dist >= r * 0.55)
    if cls == 4:  # cross
        arm = r * 0.38
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    if cls == 5:  # diamond
        return (np.abs(dy) + np.abs(dx)) <= r * 1.2
    if cls == 6:  # stripes inside a square window
        window = np.maximum(np.abs(dy), np.abs(dx)) <= r
        return window & ((np.floor(dy / 2.5).astype(int) % 2) == 0)
    if cls == 7:  # checkerboard inside a square window
        window = np.maximum(np.abs(dy), np.abs(dx)) <= r
        return window & (((np.floor(dy / 3).astype(int) + np.floor(dx / 3).astype(int)) % 2) == 0)
    raise DatasetError(f"unknown shape class {cls}")


def generate_shapes(n: int, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Render ``n`` labeled 32x32 shape images, bit-reproducible per seed."""
    rng = np.random.default_rng(seed)
    images = np.empty((n, 3, 32, 32))
    labels = rng.integers(0, len(SHAPE_CLASSES), size=n)
    for i in range(n):
        cls = int(labels[i])
        cx, cy = rng.uniform(12, 20, size=2)
        r = rng.uniform(7, 12)
        if rng.random() < COLOR_BIAS:
            fg_hue = (cls / 8.0 + rng.normal(0, 0.05)) % 1.0
        else:
            fg_hue = rng.random()
        fg = _hsv(fg_hue, rng.uniform(0.55, 1.0), rng.uniform(0.6, 1.0))
        bg = _hsv(rng.random(), rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.9))
        if np.abs(fg - bg).sum() < 0.45:  # keep the shape visible
            bg = 1.0 - fg
        mask = _shape_mask(cls, cx, cy, r)
        img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
        img = img + rng.normal(0.0, 0.02, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return images, labels.astype(np.int64)
