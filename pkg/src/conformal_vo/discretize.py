"""Quantile-based discretization of the 7 pose dimensions into interval classes.

Each dimension (x, y, z, qw, qx, qy, qz) is split at empirical quantiles of
the training values so every class holds roughly equal training mass: dense
regions of the trajectory get narrow classes.  Binning is half-open and
left-inclusive, boundary[i] <= v < boundary[i+1], with clamping at both ends
so encoding never fails on out-of-range values.

Quantile convention: linear interpolation between order statistics
(numpy's default ``method="linear"``).  Tests rely on this exact convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import Pose, Trajectory

DIMENSION_NAMES = ("x", "y", "z", "qw", "qx", "qy", "qz")
DEGENERATE_EPS = 1e-6


@dataclass(frozen=True)
class QuantileGrid:
    """Per-dimension class boundaries fitted from training pose values.

    ``boundaries[d]`` is a strictly increasing array with
    ``class_counts[d] + 1`` entries.  A degenerate dimension (all training
    values equal) collapses to a single class spanning [v - eps, v + eps]
    and is flagged so downstream calibration can skip it.
    """

    boundaries: tuple
    k: int
    class_counts: tuple
    degenerate: tuple

    def __post_init__(self):
        bnds = tuple(np.asarray(b, dtype=float) for b in self.boundaries)
        if len(bnds) != len(DIMENSION_NAMES):
            raise InvalidInputError(f"expected {len(DIMENSION_NAMES)} dimensions")
        for b in bnds:
            if len(b) < 2 or np.any(np.diff(b) <= 0):
                raise InvalidInputError("boundaries must be strictly increasing")
        for b in bnds:
            b.setflags(write=False)
        object.__setattr__(self, "boundaries", bnds)
        object.__setattr__(self, "class_counts", tuple(len(b) - 1 for b in bnds))
        object.__setattr__(self, "degenerate", tuple(bool(d) for d in self.degenerate))

    @property
    def n_dims(self):
        return len(self.boundaries)

    def to_json(self):
        return json.dumps(
            {
                "schema": "quantile-grid-v1",
                "k": self.k,
                "dimensions": [
                    {
                        "name": name,
                        "boundaries": list(map(float, b)),
                        "degenerate": deg,
                    }
                    for name, b, deg in zip(DIMENSION_NAMES, self.boundaries, self.degenerate)
                ],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema") != "quantile-grid-v1":
            raise InvalidInputError("unrecognized grid schema")
        dims = doc["dimensions"]
        return cls(
            boundaries=tuple(np.array(d["boundaries"], dtype=float) for d in dims),
            k=int(doc["k"]),
            class_counts=tuple(len(d["boundaries"]) - 1 for d in dims),
            degenerate=tuple(bool(d["degenerate"]) for d in dims),
        )


def fit_grid(training, k):
    """Fit per-dimension quantile boundaries from a training trajectory.

    Boundaries are the 0/k, 1/k, ..., k/k empirical quantiles of each
    dimension.  Tied boundaries (heavy value ties) are merged, reducing the
    effective class count for that dimension; an all-equal dimension
    collapses to a single class.
    """
    if k < 2:
        raise InvalidInputError(f"k must be >= 2, got {k}")
    if isinstance(training, Trajectory):
        values = training.as_matrix()
    else:
        values = np.asarray(training, dtype=float)
    if values.ndim != 2 or values.shape[1] != len(DIMENSION_NAMES):
        raise InvalidInputError("training values must be an n x 7 matrix")
    n_distinct = len(np.unique(values, axis=0))
    if n_distinct < k:
        raise InvalidInputError(f"need at least k={k} distinct poses, got {n_distinct}")

    probs = np.linspace(0.0, 1.0, k + 1)
    boundaries = []
    degenerate = []
    for d in range(values.shape[1]):
        col = values[:, d]
        if col.max() == col.min():
            v = float(col[0])
            boundaries.append(np.array([v - DEGENERATE_EPS, v + DEGENERATE_EPS]))
            degenerate.append(True)
            continue
        b = np.unique(np.quantile(col, probs, method="linear"))
        if len(b) < 2:
            v = float(b[0])
            b = np.array([v - DEGENERATE_EPS, v + DEGENERATE_EPS])
            degenerate.append(True)
        else:
            degenerate.append(False)
        boundaries.append(b)
    return QuantileGrid(
        boundaries=tuple(boundaries),
        k=k,
        class_counts=tuple(len(b) - 1 for b in boundaries),
        degenerate=tuple(degenerate),
    )


def encode_vector(vec, grid):
    """Class index per dimension for a 7-vector; clamps out-of-range values."""
    vec = np.asarray(vec, dtype=float)
    label = np.empty(grid.n_dims, dtype=int)
    for d, b in enumerate(grid.boundaries):
        i = int(np.searchsorted(b, vec[d], side="right")) - 1
        label[d] = min(max(i, 0), grid.class_counts[d] - 1)
    return label


def encode(pose, grid):
    """Encode a Pose to its per-dimension class label."""
    if isinstance(pose, Pose):
        vec = pose.as_vector()
    else:
        vec = np.asarray(pose, dtype=float)
    return encode_vector(vec, grid)


def encode_batch(values, grid):
    """Vectorized encode of an n x 7 value matrix; returns n x 7 int labels."""
    values = np.asarray(values, dtype=float)
    labels = np.empty(values.shape, dtype=int)
    for d, b in enumerate(grid.boundaries):
        idx = np.searchsorted(b, values[:, d], side="right") - 1
        labels[:, d] = np.clip(idx, 0, grid.class_counts[d] - 1)
    return labels


def decode(label, grid):
    """Per-dimension [lo, hi) interval of a class label."""
    label = np.asarray(label, dtype=int)
    intervals = []
    for d, b in enumerate(grid.boundaries):
        i = int(label[d])
        if i < 0 or i >= grid.class_counts[d]:
            raise InvalidInputError(
                f"class {i} out of range for dimension {DIMENSION_NAMES[d]} "
                f"({grid.class_counts[d]} classes)"
            )
        intervals.append((float(b[i]), float(b[i + 1])))
    return intervals


def decode_midpoint(label, grid):
    """Interval midpoints of a label as a 7-vector."""
    return np.array([(lo + hi) / 2.0 for lo, hi in decode(label, grid)])
