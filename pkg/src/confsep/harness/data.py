"""Synthetic generators and CSV ingestion.

All generators emit features in the unit box. ``noise`` is the standard
deviation of isotropic Gaussian jitter in those scaled coordinates; jittered
points are clipped back into the box.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from ..nn_core import DEFAULT_BOX
from ..training import Dataset

GENERATORS = ("two_moons", "gaussian_blobs", "ring")

# lower moon sits MOON_OFFSET below the sklearn-style layout's 0.5, widening
# the noise-free gap to (1 - MOON_OFFSET) * MOON_SCALE = 0.255
MOON_OFFSET = 0.15
MOON_PAD = 0.05
MOON_SCALE = (1.0 - 2 * MOON_PAD) / 3.0


class DataError(ValueError):
    pass


def _moons(n, rng, offset=MOON_OFFSET):
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, math.pi, n0)
    t1 = rng.uniform(0.0, math.pi, n1)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), offset - np.sin(t1)], axis=1)
    X = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, dtype=np.intp), np.ones(n1, dtype=np.intp)])
    # x spans [-1, 2]; y spans [offset - 1, 1], centred vertically
    y_mid = offset / 2.0
    X = np.column_stack([
        MOON_PAD + (X[:, 0] + 1.0) * MOON_SCALE,
        0.5 + (X[:, 1] - y_mid) * MOON_SCALE,
    ])
    return X, y, 2


def _ring(n, rng, inner=0.15, outer=0.4):
    n0 = n // 2
    angle = rng.uniform(0.0, 2 * math.pi, n)
    radius = np.where(np.arange(n) < n0, inner, outer)
    X = 0.5 + radius[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    y = (np.arange(n) >= n0).astype(np.intp)
    return X, y, 2


def _blobs(n, rng, classes=3, dim=2, spread=0.3):
    y = np.arange(n) % classes
    angles = 2 * math.pi * np.arange(classes) / classes
    centers = np.full((classes, dim), 0.5)
    centers[:, 0] += spread * np.cos(angles)
    if dim > 1:
        centers[:, 1] += spread * np.sin(angles)
    return centers[y].copy(), y.astype(np.intp), classes


def make_synthetic(name: str, n: int, noise: float = 0.0, seed: int = 0, **kwargs) -> Dataset:
    """Generate a labelled point cloud in the unit box.

    two_moons: two interleaved arcs; the lower arc is lowered by ``offset``
    (default 0.15), giving a noise-free inter-class gap of 0.255 (0.3 at
    offset 0).
    ring: inner circle (r=0.15) vs outer circle (r=0.4), gap 0.25.
    gaussian_blobs: ``classes`` centres on a circle of radius ``spread``
    around the box centre (``dim`` >= 1); the centres themselves when noise=0.
    """
    if n <= 0:
        raise DataError(f"n must be positive, got {n}")
    if noise < 0:
        raise DataError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    if name == "two_moons":
        X, y, k = _moons(n, rng, **kwargs)
    elif name == "ring":
        X, y, k = _ring(n, rng, **kwargs)
    elif name == "gaussian_blobs":
        X, y, k = _blobs(n, rng, **kwargs)
    else:
        raise DataError(f"unknown generator {name!r}; choose from {GENERATORS}")
    if noise > 0:
        X = X + rng.normal(0.0, noise, size=X.shape)
    X = np.clip(X, *DEFAULT_BOX)
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], name=name, n_classes=k)


def load_csv(path, box=DEFAULT_BOX) -> Dataset:
    """Read ``label,f0,f1,...`` rows; every feature must lie in ``box``."""
    path = Path(path)
    labels, rows = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label" or len(header) < 2:
            raise DataError(f"{path}:1: header must be 'label,f0,f1,...'")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                label = int(row[0])
                feats = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if label < 0:
                raise DataError(f"{path}:{lineno}: negative label {label}")
            bad = [j for j, v in enumerate(feats) if not (box[0] <= v <= box[1])]
            if bad:
                raise DataError(f"{path}:{lineno}: feature f{bad[0]}={feats[bad[0]]} outside box {box}")
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(rows), np.array(labels), name=path.stem)


def write_csv(data: Dataset, path) -> None:
    """Write with ``repr`` floats so a reload is value-exact."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{j}" for j in range(data.dim)])
        for x, label in zip(data.X, data.y):
            w.writerow([int(label)] + [repr(float(v)) for v in x])
