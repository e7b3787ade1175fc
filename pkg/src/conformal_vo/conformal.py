"""Split-conformal calibration and disjoint set prediction per pose dimension.

The nonconformity score of a calibration sample is 1 minus the softmax
probability of its true class.  The calibrated threshold per head is the
ceil((n+1)(1-alpha))-th smallest calibration score; prediction sets admit
every class whose softmax probability strictly exceeds 1 minus that
threshold.  Because the admitted classes need not be adjacent, decoding a
set yields a union of disjoint intervals per dimension, and the Cartesian
product of those unions forms the (possibly multimodal) uncertainty region.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


def conformal_quantile(scores, alpha):
    """Calibrated score threshold: the ceil((n+1)(1-alpha))-th order statistic.

    Falls back to 1.0 (full prediction set) when the rank exceeds n, i.e.
    when the calibration set is too small for the requested miscoverage.
    """
    scores = np.asarray(scores, dtype=float)
    n = len(scores)
    if n == 0:
        raise InvalidInputError("calibration scores are empty")
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    rank = math.ceil((n + 1) * (1.0 - alpha))
    if rank > n:
        return 1.0
    return float(np.sort(scores)[rank - 1])


@dataclass
class CalibrationRecord:
    """Per-head calibration scores plus the split parameters."""

    scores: list  # per head, array of 1 - p(true class); empty for skipped heads
    n: int
    alpha: float


@dataclass
class CalibratedModel:
    """Classifier + grid + per-head calibrated thresholds.

    Degenerate heads (single-class dimensions) are excluded from calibration
    and always emit their singleton class.
    """

    model: object
    grid: object
    thresholds: np.ndarray
    record: CalibrationRecord
    alpha: float

    def thresholds_for(self, alpha):
        """Recompute per-head thresholds at a different miscoverage rate."""
        out = np.zeros(len(self.thresholds))
        for h, scores in enumerate(self.record.scores):
            out[h] = 0.0 if len(scores) == 0 else conformal_quantile(scores, alpha)
        return out


@dataclass
class PredictionSet:
    """Per-head sorted class indices plus empty-set fallback flags."""

    classes: list
    fallback: np.ndarray

    @property
    def sizes(self):
        return np.array([len(c) for c in self.classes])


@dataclass
class UncertaintyRegion:
    """Per-dimension disjoint interval unions and their cuboid product.

    ``intervals[d]`` is a sorted list of (lo, hi) pairs with adjacent class
    intervals already merged.  ``masses[d]`` carries the summed softmax mass
    per interval when scores were supplied, else ones.
    """

    intervals: list
    masses: list = field(default=None)

    @property
    def cuboid_count(self):
        return int(np.prod([len(iv) for iv in self.intervals]))

    def iter_cuboids(self):
        """Lazily enumerate cuboids as tuples of per-dimension (lo, hi)."""
        return itertools.product(*self.intervals)

    def to_json(self, extra=None):
        doc = {
            "schema": "uncertainty-region-v1",
            "intervals": [[[float(lo), float(hi)] for lo, hi in iv] for iv in self.intervals],
            "cuboid_count": self.cuboid_count,
        }
        if extra:
            doc.update(extra)
        return json.dumps(doc, sort_keys=True)


def calibrate(model, grid, calib_features, calib_labels, alpha):
    """Split-conformal calibration of a fitted multi-head model.

    The calibration set must be disjoint from training.  Returns a
    CalibratedModel holding per-head thresholds and the raw score record.
    """
    x = np.atleast_2d(np.asarray(calib_features, dtype=float))
    y = np.atleast_2d(np.asarray(calib_labels, dtype=int))
    if x.shape[0] == 0:
        raise InvalidInputError("calibration set is empty")
    if x.shape[0] != y.shape[0]:
        raise InvalidInputError("calibration features and labels differ in length")
    n = x.shape[0]
    score_lists = []
    thresholds = np.zeros(len(model.heads))
    all_scores = model.scores(x)
    for h, p in enumerate(all_scores):
        if grid.degenerate[h] or model.heads[h].n_classes == 1:
            score_lists.append(np.array([]))
            thresholds[h] = 0.0
            continue
        s = 1.0 - p[np.arange(n), y[:, h]]
        score_lists.append(s)
        thresholds[h] = conformal_quantile(s, alpha)
    record = CalibrationRecord(scores=score_lists, n=n, alpha=alpha)
    return CalibratedModel(model=model, grid=grid, thresholds=thresholds, record=record, alpha=alpha)


def _sets_from_scores(scores_per_head, thresholds, grid):
    classes, fallback = [], []
    for h, p in enumerate(scores_per_head):
        if grid.degenerate[h]:
            classes.append(np.array([0]))
            fallback.append(False)
            continue
        idx = np.flatnonzero(p > 1.0 - thresholds[h])
        if len(idx) == 0:
            idx = np.array([int(np.argmax(p))])
            fallback.append(True)
        else:
            fallback.append(False)
        classes.append(idx)
    return PredictionSet(classes=classes, fallback=np.array(fallback))


def predict_set(cal, feature, alpha=None):
    """Prediction set for one feature vector; optionally at a different alpha."""
    thresholds = cal.thresholds if alpha is None else cal.thresholds_for(alpha)
    scores = cal.model.scores(np.asarray(feature, dtype=float))
    return _sets_from_scores(scores, thresholds, cal.grid)


def predict_set_batch(cal, features, alpha=None):
    """Prediction sets for an n x F feature matrix."""
    thresholds = cal.thresholds if alpha is None else cal.thresholds_for(alpha)
    all_scores = cal.model.scores(np.atleast_2d(np.asarray(features, dtype=float)))
    n = all_scores[0].shape[0]
    return [
        _sets_from_scores([p[i] for p in all_scores], thresholds, cal.grid) for i in range(n)
    ]


def to_region(pset, grid, scores=None):
    """Decode a prediction set into per-dimension merged interval unions.

    Classes with consecutive indices share a boundary and merge into one
    maximal interval; non-adjacent classes stay disjoint.  When per-head
    softmax ``scores`` are given, each interval records its summed mass.
    """
    intervals, masses = [], []
    for d, idx in enumerate(pset.classes):
        b = grid.boundaries[d]
        idx = np.sort(np.asarray(idx, dtype=int))
        if len(idx) == 0 or idx[0] < 0 or idx[-1] >= grid.class_counts[d]:
            raise InvalidInputError(f"invalid class indices for dimension {d}")
        dim_intervals, dim_masses = [], []
        run_start = idx[0]
        prev = idx[0]
        mass = scores[d][idx[0]] if scores is not None else 1.0
        for i in idx[1:]:
            if i == prev + 1:
                prev = i
                if scores is not None:
                    mass += scores[d][i]
            else:
                dim_intervals.append((float(b[run_start]), float(b[prev + 1])))
                dim_masses.append(float(mass))
                run_start = prev = i
                mass = scores[d][i] if scores is not None else 1.0
        dim_intervals.append((float(b[run_start]), float(b[prev + 1])))
        dim_masses.append(float(mass))
        intervals.append(dim_intervals)
        masses.append(dim_masses)
    return UncertaintyRegion(intervals=intervals, masses=masses)


def coverage_audit(cal, test_features, test_labels, alpha=None):
    """Per-head fraction of test samples whose true class is in the set."""
    x = np.atleast_2d(np.asarray(test_features, dtype=float))
    y = np.atleast_2d(np.asarray(test_labels, dtype=int))
    if x.shape[0] == 0:
        raise InvalidInputError("test set is empty")
    thresholds = cal.thresholds if alpha is None else cal.thresholds_for(alpha)
    all_scores = cal.model.scores(x)
    n = x.shape[0]
    coverage = np.zeros(len(all_scores))
    for h, p in enumerate(all_scores):
        if cal.grid.degenerate[h]:
            coverage[h] = float(np.mean(y[:, h] == 0))
            continue
        true_p = p[np.arange(n), y[:, h]]
        hit = true_p > 1.0 - thresholds[h]
        # empty-set fallback: covered only if the argmax equals the truth
        empty = (p > 1.0 - thresholds[h]).sum(axis=1) == 0
        hit = np.where(empty, np.argmax(p, axis=1) == y[:, h], hit)
        coverage[h] = float(np.mean(hit))
    return coverage


def mean_set_size(psets):
    """Mean per-head set cardinality over a list of PredictionSets."""
    return float(np.mean([ps.sizes.mean() for ps in psets]))
