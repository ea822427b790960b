"""Deterministic synthetic datasets and IDX image ingestion.

Everything lands in the unit cube so perturbation budgets, direction scales,
and boundary distances share one scale. The affine map into the cube uses a
single global scale factor, which keeps pairwise-distance rank order intact.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from bflab.errors import ConfigError, InputError, ModelFileError
from bflab.model import LabeledPoint
from bflab.util import rng_from

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    name: str
    X: np.ndarray  # (n, d) in [0,1]
    y: np.ndarray  # (n,) int labels
    num_classes: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    gen_seed: int

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if X.ndim != 2 or len(X) != len(y):
            raise InputError("X must be (n, d) with one label per row")
        if len(X) and (X.min() < 0.0 or X.max() > 1.0):
            raise InputError("dataset coordinates must lie in [0,1]")
        tr = np.ascontiguousarray(self.train_idx, dtype=np.int64)
        te = np.ascontiguousarray(self.test_idx, dtype=np.int64)
        if np.intersect1d(tr, te).size:
            raise InputError("train/test splits overlap")
        if len(tr) + len(te) != len(X):
            raise InputError("splits must cover the dataset exactly")
        for arr in (X, y, tr, te):
            arr.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "train_idx", tr)
        object.__setattr__(self, "test_idx", te)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def points(self, idx: np.ndarray | None = None) -> list[LabeledPoint]:
        sel = np.arange(len(self.X)) if idx is None else idx
        return [LabeledPoint(self.X[i], int(self.y[i])) for i in sel]

    def train_points(self) -> list[LabeledPoint]:
        return self.points(self.train_idx)

    def test_points(self) -> list[LabeledPoint]:
        return self.points(self.test_idx)

    def coord_std(self) -> float:
        """Mean per-coordinate standard deviation; the scale knob for
        direction sampling on synthetic data."""
        return float(np.mean(self.X.std(axis=0)))


def _rescale_to_unit_cube(X: np.ndarray, margin: float = 0.02) -> np.ndarray:
    """Shift and uniformly scale into [margin, 1-margin]^d.

    One scalar scale for all coordinates, so relative geometry (and the rank
    order of pairwise distances) is preserved.
    """
    lo = X.min(axis=0)
    span = float((X - lo).max())
    if span == 0.0:
        span = 1.0
    return margin + (X - lo) * ((1.0 - 2.0 * margin) / span)


def _stratified_split(y: np.ndarray, seed: int, train_frac: float = 0.5):
    rng = rng_from(seed, 100)
    train, test = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        k = max(1, int(round(train_frac * len(idx))))
        k = min(k, len(idx) - 1) if len(idx) > 1 else k
        train.extend(idx[:k])
        test.extend(idx[k:])
    return np.sort(np.asarray(train)), np.sort(np.asarray(test))


def _finish(name, X, y, num_classes, seed) -> Dataset:
    X = _rescale_to_unit_cube(X)
    train_idx, test_idx = _stratified_split(y, seed)
    return Dataset(name, X, y, num_classes, train_idx, test_idx, gen_seed=int(seed))


def gen_blobs(k: int, d: int, n_per_class: int, spread: float, seed: int) -> Dataset:
    """k seeded Gaussian clusters in d dimensions, rescaled into the cube."""
    if k < 2:
        raise ConfigError(f"need at least 2 classes, got {k}")
    if d < 1 or n_per_class < 2:
        raise ConfigError("d >= 1 and n_per_class >= 2 required")
    rng = rng_from(seed, 0)
    centers = rng.uniform(0.0, 1.0, size=(k, d))
    X = np.concatenate(
        [centers[c] + rng.normal(0.0, spread, size=(n_per_class, d)) for c in range(k)]
    )
    y = np.repeat(np.arange(k), n_per_class)
    return _finish(f"blobs-k{k}-d{d}", X, y, k, seed)


def gen_moons(n_per_class: int, noise: float, seed: int) -> Dataset:
    """Two interleaved crescents in 2-d."""
    if n_per_class < 2:
        raise ConfigError("n_per_class >= 2 required")
    rng = rng_from(seed, 0)
    t = np.linspace(0.0, np.pi, n_per_class)
    outer = np.column_stack([np.cos(t), np.sin(t)])
    inner = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    X = np.concatenate([outer, inner])
    if noise > 0:
        X = X + rng.normal(0.0, noise, size=X.shape)
    y = np.repeat(np.arange(2), n_per_class)
    return _finish("moons", X, y, 2, seed)


def gen_rings(k: int, n_per_class: int, noise: float, seed: int) -> Dataset:
    """k concentric annuli; curved boundaries everywhere."""
    if k < 2:
        raise ConfigError(f"need at least 2 classes, got {k}")
    if n_per_class < 2:
        raise ConfigError("n_per_class >= 2 required")
    rng = rng_from(seed, 0)
    rows, labels = [], []
    for c in range(k):
        radius = (c + 1.0) / (k + 1.0)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n_per_class)
        r = radius + rng.normal(0.0, noise, size=n_per_class)
        rows.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
        labels.append(np.full(n_per_class, c))
    X = np.concatenate(rows)
    y = np.concatenate(labels).astype(np.int64)
    return _finish(f"rings-k{k}", X, y, k, seed)


def _read_be32(buf: bytes, offset: int, path, what: str) -> int:
    if offset + 4 > len(buf):
        raise ModelFileError(
            f"{path}: truncated while reading {what} at byte offset {offset}"
        )
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path, max_items: int | None = None, downscale: int = 1) -> Dataset:
    """Load an IDX image/label file pair into the unit cube.

    `downscale` block-means non-overlapping s x s pixel blocks (image sides
    must be divisible by s).
    """
    with open(images_path, "rb") as fh:
        img_buf = fh.read()
    with open(labels_path, "rb") as fh:
        lab_buf = fh.read()

    magic = _read_be32(img_buf, 0, images_path, "magic")
    if magic != IDX_IMAGE_MAGIC:
        raise ModelFileError(
            f"{images_path}: bad image magic 0x{magic:08x} at byte offset 0, "
            f"expected 0x{IDX_IMAGE_MAGIC:08x}"
        )
    n_img = _read_be32(img_buf, 4, images_path, "image count")
    rows = _read_be32(img_buf, 8, images_path, "row count")
    cols = _read_be32(img_buf, 12, images_path, "column count")
    need = 16 + n_img * rows * cols
    if len(img_buf) < need:
        raise ModelFileError(
            f"{images_path}: truncated pixel payload, file ends at byte offset "
            f"{len(img_buf)} but header promises {need}"
        )

    magic = _read_be32(lab_buf, 0, labels_path, "magic")
    if magic != IDX_LABEL_MAGIC:
        raise ModelFileError(
            f"{labels_path}: bad label magic 0x{magic:08x} at byte offset 0, "
            f"expected 0x{IDX_LABEL_MAGIC:08x}"
        )
    n_lab = _read_be32(lab_buf, 4, labels_path, "label count")
    if n_lab != n_img:
        raise ModelFileError(
            f"label count {n_lab} does not match image count {n_img}"
        )
    if len(lab_buf) < 8 + n_lab:
        raise ModelFileError(
            f"{labels_path}: truncated label payload, file ends at byte offset "
            f"{len(lab_buf)} but header promises {8 + n_lab}"
        )

    n = n_img if max_items is None else min(n_img, max_items)
    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=n * rows * cols, offset=16)
    imgs = pixels.reshape(n, rows, cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab_buf, dtype=np.uint8, count=n, offset=8).astype(np.int64)

    if downscale > 1:
        if rows % downscale or cols % downscale:
            raise ConfigError(
                f"downscale {downscale} does not divide image shape {rows}x{cols}"
            )
        imgs = imgs.reshape(
            n, rows // downscale, downscale, cols // downscale, downscale
        ).mean(axis=(2, 4))

    X = imgs.reshape(n, -1)
    num_classes = int(labels.max()) + 1 if n else 0
    # round-robin per class so both splits see every class
    train, test = [], []
    seen: dict[int, int] = {}
    for i, lab in enumerate(labels):
        c = seen.get(int(lab), 0)
        (train if c % 2 == 0 else test).append(i)
        seen[int(lab)] = c + 1
    return Dataset(
        name="idx",
        X=X,
        y=labels,
        num_classes=num_classes,
        train_idx=np.asarray(train, dtype=np.int64),
        test_idx=np.asarray(test, dtype=np.int64),
        gen_seed=0,
    )


def save_csv(ds: Dataset, path) -> None:
    """Write header x0..x{d-1},y then one row per point."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(ds.dim)] + ["y"])
        for row, lab in zip(ds.X, ds.y):
            writer.writerow([repr(float(v)) for v in row] + [int(lab)])
