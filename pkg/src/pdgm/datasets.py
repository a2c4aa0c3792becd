"""Two-dimensional toy data generators and CSV persistence.

All generators return an (n, 2) float array, deterministic given the seed.
When ``normalize`` is on, each coordinate is centred and both coordinates
are divided by the larger coordinate's standard deviation, so the data
fits the standard-Gaussian base scale while keeping its aspect ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParseError, UnknownDataset
from .streams import stream

DATASET_NAMES = ("checkerboard", "gaussian_grid", "olympic_rings", "rose", "fractal_tree")

# Shape parameters, kept in one place so they can be tuned without touching
# the generator logic.
SHAPE_PARAMS = {
    "checkerboard": {"cells": 4, "extent": 2.0},
    "gaussian_grid": {
        "grid": (-1.5, 0.0, 1.5),
        "sigma": 0.08,
        # published list has ten weights for nine components; the first
        # (.01) is dropped and the rest renormalised, row-major assignment
        "weights": (0.02, 0.02, 0.05, 0.05, 0.1, 0.1, 0.15, 0.2, 0.3),
    },
    "olympic_rings": {
        "centers": ((-2.2, 0.5), (0.0, 0.5), (2.2, 0.5), (-1.1, -0.5), (1.1, -0.5)),
        "radius": 1.0,
        "sigma": 0.05,
    },
    "rose": {"petal_freq": 2, "sigma": 0.02},
    "fractal_tree": {"depth": 7, "angle": np.pi / 5, "decay": 0.7, "trunk": 1.0},
}


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    n: int
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if self.name not in DATASET_NAMES:
            raise UnknownDataset(
                f"unknown dataset {self.name!r}; valid names: {', '.join(DATASET_NAMES)}"
            )
        if self.n < 1:
            raise ValueError("sample count must be >= 1")


def _checkerboard(n, rng):
    p = SHAPE_PARAMS["checkerboard"]
    cells, ext = p["cells"], p["extent"]
    active = [(i, j) for i in range(cells) for j in range(cells) if (i + j) % 2 == 0]
    pick = rng.integers(0, len(active), size=n)
    ij = np.array(active, dtype=float)[pick]
    u = rng.random((n, 2))
    return -ext + ij + u


def _gaussian_grid(n, rng):
    p = SHAPE_PARAMS["gaussian_grid"]
    g = p["grid"]
    means = np.array([(gx, gy) for gy in g for gx in g], dtype=float)  # row-major
    w = np.asarray(p["weights"], dtype=float)
    w = w / w.sum()
    comp = rng.choice(len(w), size=n, p=w)
    return means[comp] + p["sigma"] * rng.standard_normal((n, 2))


def _olympic_rings(n, rng):
    p = SHAPE_PARAMS["olympic_rings"]
    centers = np.asarray(p["centers"], dtype=float)
    ring = rng.integers(0, len(centers), size=n)
    theta = rng.random(n) * 2 * np.pi
    r = p["radius"] + p["sigma"] * rng.standard_normal(n)
    return centers[ring] + np.column_stack((r * np.cos(theta), r * np.sin(theta)))


def _rose(n, rng):
    p = SHAPE_PARAMS["rose"]
    theta = rng.random(n) * 2 * np.pi
    r = np.abs(np.cos(p["petal_freq"] * theta))
    pts = np.column_stack((r * np.cos(theta), r * np.sin(theta)))
    return pts + p["sigma"] * rng.standard_normal((n, 2))


def _tree_segments():
    p = SHAPE_PARAMS["fractal_tree"]
    segs = []

    def grow(x0, y0, angle, length, depth):
        x1 = x0 + length * np.cos(angle)
        y1 = y0 + length * np.sin(angle)
        segs.append((x0, y0, x1, y1, length))
        if depth > 1:
            grow(x1, y1, angle + p["angle"], length * p["decay"], depth - 1)
            grow(x1, y1, angle - p["angle"], length * p["decay"], depth - 1)

    grow(0.0, 0.0, np.pi / 2, p["trunk"], p["depth"])
    return np.asarray(segs, dtype=float)


def _fractal_tree(n, rng):
    segs = _tree_segments()
    w = segs[:, 4] / segs[:, 4].sum()
    pick = rng.choice(len(segs), size=n, p=w)
    u = rng.random(n)
    s = segs[pick]
    return np.column_stack(
        (s[:, 0] + u * (s[:, 2] - s[:, 0]), s[:, 1] + u * (s[:, 3] - s[:, 1]))
    )


_GENERATORS = {
    "checkerboard": _checkerboard,
    "gaussian_grid": _gaussian_grid,
    "olympic_rings": _olympic_rings,
    "rose": _rose,
    "fractal_tree": _fractal_tree,
}


def normalize_samples(samples: np.ndarray) -> np.ndarray:
    """Centre each coordinate and divide both by the larger coordinate std."""
    centred = samples - samples.mean(axis=0)
    scale = centred.std(axis=0).max()
    return centred / scale


def generate(spec: DatasetSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """n i.i.d. points from the named distribution; deterministic given seed."""
    if rng is None:
        rng = stream(spec.seed)
    samples = _GENERATORS[spec.name](spec.n, rng)
    if spec.normalize:
        samples = normalize_samples(samples)
    return samples


def save_csv(path, samples: np.ndarray) -> None:
    """Write an (n, k) matrix with header x0,..,x{k-1}, 17 significant digits."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    k = samples.shape[1] if samples.size else 2
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(f"x{i}" for i in range(k)) + "\n")
        for row in samples:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_csv(path) -> np.ndarray:
    """Round-trip partner of :func:`save_csv`; errors name the offending line."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise ParseError(f"{path}: empty file, expected a header row")
    k = len(lines[0].split(","))
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != k:
            raise ParseError(f"{path}: line {lineno}: expected {k} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    return np.asarray(rows, dtype=float).reshape(len(rows), k)
