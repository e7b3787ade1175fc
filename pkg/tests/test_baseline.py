"""Regression rollout and trajectory error metrics."""

import numpy as np
import pytest

from conformal_vo.baseline import baseline_rollout, orientation_error, rmse
from conformal_vo.errors import InvalidInputError
from conformal_vo.geometry import Pose, Trajectory


def traj_from_positions(positions, quat=(1.0, 0.0, 0.0, 0.0)):
    poses = tuple(Pose(p, quat) for p in positions)
    return Trajectory(tuple(range(len(poses))), poses)


class TestRmse:
    def test_identical_trajectories_zero(self):
        t = traj_from_positions([[0, 0, 0], [1, 1, 1]])
        assert rmse(t, t) == 0.0

    def test_unit_offset_is_one(self):
        truth = traj_from_positions([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
        pred = traj_from_positions([[0, 1, 0], [1, 1, 0], [2, 1, 0]])
        assert rmse(pred, truth) == 1.0

    def test_single_outlier_closed_form(self):
        # errors 5 and 0 over two frames: sqrt((25 + 0) / 2) = 5 / sqrt(2)
        truth = traj_from_positions([[0, 0, 0], [0, 0, 0]])
        pred = traj_from_positions([[5, 0, 0], [0, 0, 0]])
        assert rmse(pred, truth) == pytest.approx(5.0 / np.sqrt(2.0))

    def test_position_only(self):
        truth = traj_from_positions([[0, 0, 0]], quat=(1, 0, 0, 0))
        pred = traj_from_positions([[0, 0, 0]], quat=(0, 0, 0, 1))
        assert rmse(pred, truth) == 0.0

    def test_mismatched_indices_rejected(self):
        a = traj_from_positions([[0, 0, 0], [1, 0, 0]])
        b = Trajectory((0, 2), a.poses)
        with pytest.raises(InvalidInputError):
            rmse(a, b)


class TestOrientationError:
    def test_identical_zero(self):
        t = traj_from_positions([[0, 0, 0]])
        assert orientation_error(t, t) == 0.0

    def test_half_turn_is_sqrt_two(self):
        truth = traj_from_positions([[0, 0, 0]], quat=(1, 0, 0, 0))
        pred = traj_from_positions([[0, 0, 0]], quat=(0, 0, 0, 1))
        assert orientation_error(pred, truth) == pytest.approx(np.sqrt(2.0))

    def test_double_cover_collapses(self):
        truth = traj_from_positions([[0, 0, 0]], quat=(0, 1, 0, 0))
        pred = traj_from_positions([[0, 0, 0]], quat=(0, -1, 0, 0))
        assert orientation_error(pred, truth) == pytest.approx(0.0)


class _StubRegressor:
    blocks = 8

    def __init__(self, outputs):
        self.outputs = np.asarray(outputs, dtype=float)

    def predict(self, feats):
        return self.outputs[: len(np.atleast_2d(feats))]


class TestBaselineRollout:
    def test_wraps_outputs_into_trajectory(self):
        frames = [np.random.default_rng(i).uniform(0, 1, (64, 64)) for i in range(3)]
        out = np.tile([1.0, 2.0, 3.0, 1.0, 0.0, 0.0, 0.0], (3, 1))
        result = baseline_rollout(_StubRegressor(out), frames)
        assert len(result.trajectory.poses) == 3
        assert np.allclose(result.trajectory.poses[0].position, [1, 2, 3])
        assert result.trajectory.frame_indices == (0, 1, 2)
