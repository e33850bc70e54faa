"""Synthetic 2-D datasets in the unit square and TNSR-backed tiny-image loading.

Every generator maps its raw geometry into [0, 1]^2 with a fixed isotropic
affine map (listed in ``AFFINE``), so distances keep their shape and the
noiseless point sets can be checked against their parametrisation. Noise
that would push a point outside the square is clipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng, tnsr
from .errors import ShapeError, TensorFormatError

# raw -> unit square: u = (raw + shift) * scale
AFFINE = {
    "two_moons": (np.array([1.5, 1.75]), 0.25),
    "circles": (np.array([1.25, 1.25]), 0.4),
}
KINDS = ("two_moons", "circles", "blobs")


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    classes: int
    kind: str = ""

    def __len__(self):
        return len(self.y)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.classes, self.kind)


def _balanced_labels(n, classes):
    if n < classes:
        raise ValueError(f"need at least {classes} samples, got {n}")
    counts = [len(part) for part in np.array_split(np.arange(n), classes)]
    return np.repeat(np.arange(classes), counts)


def _finish(raw, y, kind, noise, g, classes):
    if noise:
        raw = raw + noise * g.standard_normal(raw.shape)
    shift, scale = AFFINE[kind]
    x = np.clip((raw + shift) * scale, 0.0, 1.0)
    order = g.permutation(len(y))
    return Dataset(x[order].astype(np.float32), y[order].astype(np.int64), classes, kind)


def two_moons(n, noise=0.0, seed=0):
    """Two interleaved half circles of radius 1 (raw space), labels 0 (upper) and 1 (lower)."""
    g = rng.stream(seed, rng.DATA, 1)
    y = _balanced_labels(n, 2)
    t = g.uniform(0.0, math.pi, size=n)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    raw = np.where((y == 0)[:, None], upper, lower)
    return _finish(raw, y, "two_moons", noise, g, 2)


def circles(n, noise=0.0, seed=0, factor=0.5):
    """Concentric circles: label 0 on radius 1, label 1 on radius ``factor``."""
    g = rng.stream(seed, rng.DATA, 2)
    y = _balanced_labels(n, 2)
    t = g.uniform(0.0, 2 * math.pi, size=n)
    r = np.where(y == 0, 1.0, factor)
    raw = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    return _finish(raw, y, "circles", noise, g, 2)


def blobs(n, noise=0.05, seed=0, classes=3, radius=0.3):
    """Isotropic Gaussian blobs, centres evenly spaced on a circle around (0.5, 0.5)."""
    g = rng.stream(seed, rng.DATA, 3)
    y = _balanced_labels(n, classes)
    angles = 2 * math.pi * np.arange(classes) / classes
    centres = 0.5 + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    x = centres[y] + noise * g.standard_normal((n, 2))
    order = g.permutation(n)
    return Dataset(np.clip(x, 0, 1)[order].astype(np.float32), y[order], classes, "blobs")


def generate(kind, n, noise=0.0, seed=0, classes=None):
    if n < 2:
        raise ValueError("n must be at least 2")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    if kind == "two_moons":
        return two_moons(n, noise, seed)
    if kind == "circles":
        return circles(n, noise, seed)
    if kind == "blobs":
        return blobs(n, noise, seed, classes=classes or 3)
    raise ValueError(f"unknown dataset kind {kind!r}; choose from {KINDS}")


def train_test(kind, n_train, n_test, noise=0.0, seed=0, classes=None):
    """Independent train and test draws from sub-seeds of ``seed``."""
    return (generate(kind, n_train, noise, rng.derive_seed(seed, "train"), classes),
            generate(kind, n_test, noise, rng.derive_seed(seed, "test"), classes))


def load_files(inputs_path, labels_path, classes=None):
    """Paired TNSR files: f32 inputs [n, ...] in [0, 1] and u32 labels [n]."""
    x = tnsr.load(inputs_path, dtype=np.float32)
    y = tnsr.load(labels_path, dtype=np.uint32).astype(np.int64)
    if y.ndim != 1 or len(y) != len(x):
        raise TensorFormatError(f"labels shape {y.shape} does not pair with inputs {x.shape}")
    if x.min() < 0 or x.max() > 1:
        raise TensorFormatError("inputs must lie in [0, 1]")
    classes = classes or int(y.max()) + 1
    if len(y) < classes:
        raise ValueError(f"need at least {classes} samples, got {len(y)}")
    if y.max() >= classes:
        raise ShapeError(f"label {int(y.max())} out of range for {classes} classes")
    return Dataset(x, y, classes, "file")


def save_files(ds, inputs_path, labels_path):
    tnsr.save(inputs_path, np.asarray(ds.x, dtype=np.float32))
    tnsr.save(labels_path, np.asarray(ds.y, dtype=np.uint32))
