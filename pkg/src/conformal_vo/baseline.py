"""Classical end-to-end regression arm and the trajectory error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import extract_features_batch
from .errors import InvalidInputError
from .geometry import Pose, Trajectory, quat_distance


@dataclass
class BaselineResult:
    trajectory: Trajectory
    outputs: np.ndarray  # n x 7 raw regression outputs (quaternions normalized)


def baseline_rollout(model, frames):
    """Per-frame direct pose regression; no conformal or reasoning stage."""
    feats = extract_features_batch(frames, blocks=model.blocks)
    outputs = model.predict(feats)
    poses = tuple(Pose(v[:3], v[3:]) for v in outputs)
    return BaselineResult(
        trajectory=Trajectory(tuple(range(len(frames))), poses), outputs=outputs
    )


def rmse(predicted, truth):
    """Root mean squared Euclidean position error over matched frames.

    Position only; orientation error is reported separately via
    ``orientation_error`` so the two are never silently mixed.
    """
    if predicted.frame_indices != truth.frame_indices:
        raise InvalidInputError("trajectories must share frame indices")
    p = np.stack([pose.position for pose in predicted.poses])
    t = np.stack([pose.position for pose in truth.poses])
    return float(np.sqrt(np.mean(np.sum((p - t) ** 2, axis=1))))


def orientation_error(predicted, truth):
    """Mean quaternion chordal distance over matched frames."""
    if predicted.frame_indices != truth.frame_indices:
        raise InvalidInputError("trajectories must share frame indices")
    return float(
        np.mean(
            [quat_distance(a.orientation, b.orientation)
             for a, b in zip(predicted.poses, truth.poses)]
        )
    )
