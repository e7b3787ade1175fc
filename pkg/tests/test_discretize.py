"""Quantile grid fitting, encoding, and interval decoding."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conformal_vo.discretize import (
    QuantileGrid,
    decode,
    decode_midpoint,
    encode,
    encode_batch,
    encode_vector,
    fit_grid,
)
from conformal_vo.errors import InvalidInputError
from conformal_vo.geometry import Pose


def poses_from_column(col):
    """Embed a 1-D value list into dimension 0 of an n x 7 pose matrix."""
    col = np.asarray(col, dtype=float)
    m = np.zeros((len(col), 7))
    m[:, 0] = col
    m[:, 1] = np.linspace(0, 1, len(col))  # keep rows distinct
    m[:, 2] = np.linspace(0, 2, len(col))
    m[:, 3] = 1.0
    return m


def quantile_oracle(values, p):
    """Linear interpolation between order statistics, written out by hand."""
    v = np.sort(np.asarray(values, dtype=float))
    h = (len(v) - 1) * p
    lo = int(np.floor(h))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


class TestFitGrid:
    def test_quartiles_of_0_to_99(self):
        m = poses_from_column(np.arange(100.0))
        grid = fit_grid(m, 4)
        expect = [quantile_oracle(np.arange(100.0), p) for p in (0, 0.25, 0.5, 0.75, 1.0)]
        assert expect[2] == 49.5
        assert np.allclose(grid.boundaries[0], expect)

    def test_uniform_values_two_even_bins(self):
        vals = np.arange(0.0, 100.0, 10.0)
        grid = fit_grid(poses_from_column(vals), 2)
        labels = encode_batch(poses_from_column(vals), grid)[:, 0]
        counts = np.bincount(labels, minlength=2)
        assert counts[0] == 5 and counts[1] == 5

    def test_mass_concentration_pulls_boundaries(self):
        rng = np.random.default_rng(0)
        vals = np.concatenate([rng.uniform(0, 1, 90), rng.uniform(9, 10, 10)])
        grid = fit_grid(poses_from_column(vals), 10)
        inside = np.sum((grid.boundaries[0] >= 0) & (grid.boundaries[0] <= 1))
        assert inside >= 8

    def test_per_bin_counts_balanced(self):
        rng = np.random.default_rng(3)
        vals = rng.normal(size=200)
        k = 8
        grid = fit_grid(poses_from_column(vals), k)
        labels = encode_batch(poses_from_column(vals), grid)[:, 0]
        counts = np.bincount(labels, minlength=k)
        assert counts.min() >= 200 // k - 1
        assert counts.max() <= -(-200 // k) + 1

    def test_boundaries_span_training_range(self):
        rng = np.random.default_rng(7)
        m = rng.normal(size=(80, 7))
        m[:, 3:] = np.abs(m[:, 3:]) + 0.1
        grid = fit_grid(m, 5)
        for d in range(7):
            assert grid.boundaries[d][0] <= m[:, d].min()
            assert grid.boundaries[d][-1] >= m[:, d].max()

    def test_k_below_two_rejected(self):
        with pytest.raises(InvalidInputError):
            fit_grid(poses_from_column(np.arange(10.0)), 1)

    def test_insufficient_distinct_poses_rejected(self):
        m = poses_from_column(np.arange(3.0))
        with pytest.raises(InvalidInputError):
            fit_grid(m, 5)

    def test_degenerate_dimension_collapses(self):
        m = poses_from_column(np.arange(50.0))
        m[:, 2] = 4.0  # constant z
        grid = fit_grid(m, 5)
        assert grid.degenerate[2]
        assert grid.class_counts[2] == 1
        assert grid.boundaries[2][0] < 4.0 < grid.boundaries[2][1]

    def test_tied_boundaries_merge(self):
        vals = np.concatenate([np.zeros(90), np.arange(1.0, 11.0)])
        grid = fit_grid(poses_from_column(vals), 10)
        assert grid.class_counts[0] < 10
        assert np.all(np.diff(grid.boundaries[0]) > 0)

    @settings(deadline=None, max_examples=20)
    @given(seed=st.integers(0, 1000))
    def test_mean_width_non_increasing_in_k(self, seed):
        rng = np.random.default_rng(seed)
        vals = rng.normal(size=300)
        widths = []
        for k in (5, 10, 20):
            grid = fit_grid(poses_from_column(vals), k)
            widths.append(float(np.mean(np.diff(grid.boundaries[0]))))
        assert widths[0] >= widths[1] >= widths[2]


class TestEncode:
    def setup_method(self):
        self.grid = fit_grid(poses_from_column(np.arange(100.0)), 4)

    def test_interior_boundary_is_left_inclusive(self):
        b = self.grid.boundaries[0]
        vec = np.array([b[2], 0.5, 1.0, 1.0, 0, 0, 0])
        assert encode_vector(vec, self.grid)[0] == 2

    def test_below_range_clamps_to_zero(self):
        vec = np.array([-1e6, 0.5, 1.0, 1.0, 0, 0, 0])
        assert encode_vector(vec, self.grid)[0] == 0

    def test_above_range_clamps_to_last(self):
        vec = np.array([1e6, 0.5, 1.0, 1.0, 0, 0, 0])
        assert encode_vector(vec, self.grid)[0] == 3

    def test_accepts_pose_objects(self):
        p = Pose([5.0, 0.1, 0.2], [1, 0, 0, 0])
        label = encode(p, self.grid)
        assert label.shape == (7,)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(1)
        m = rng.uniform(-10, 110, size=(40, 7))
        batch = encode_batch(m, self.grid)
        for i in range(len(m)):
            assert np.array_equal(batch[i], encode_vector(m[i], self.grid))


class TestDecode:
    def test_simple_interval(self):
        grid = QuantileGrid(
            boundaries=tuple([np.array([0.0, 1.0, 2.0])] * 7),
            k=2, class_counts=(2,) * 7, degenerate=(False,) * 7,
        )
        iv = decode(np.zeros(7, dtype=int), grid)
        assert iv[0] == (0.0, 1.0)

    def test_out_of_range_label_rejected(self):
        grid = fit_grid(poses_from_column(np.arange(100.0)), 4)
        label = np.zeros(7, dtype=int)
        label[0] = 4
        with pytest.raises(InvalidInputError):
            decode(label, grid)

    def test_encode_decode_contains_value(self):
        grid = fit_grid(poses_from_column(np.arange(100.0)), 4)
        rng = np.random.default_rng(2)
        for _ in range(30):
            vec = np.array([rng.uniform(0, 99), 0.5, 1.0, 1.0, 0, 0, 0])
            iv = decode(encode_vector(vec, grid), grid)
            lo, hi = iv[0]
            assert lo <= vec[0] <= hi

    def test_midpoint_within_half_width(self):
        grid = fit_grid(poses_from_column(np.arange(100.0)), 4)
        rng = np.random.default_rng(5)
        for _ in range(30):
            vec = np.array([rng.uniform(0, 99), 0.5, 1.0, 1.0, 0, 0, 0])
            label = encode_vector(vec, grid)
            mid = decode_midpoint(label, grid)
            lo, hi = decode(label, grid)[0]
            assert abs(mid[0] - vec[0]) <= (hi - lo) / 2.0 + 1e-12

    def test_intervals_partition_range(self):
        grid = fit_grid(poses_from_column(np.arange(100.0)), 4)
        b = grid.boundaries[0]
        edges = [decode(np.array([i, 0, 0, 0, 0, 0, 0]), grid)[0] for i in range(4)]
        for (lo1, hi1), (lo2, _) in zip(edges, edges[1:]):
            assert hi1 == lo2
        assert edges[0][0] == b[0] and edges[-1][1] == b[-1]


class TestSerialization:
    def test_json_round_trip(self):
        rng = np.random.default_rng(11)
        m = rng.normal(size=(60, 7))
        grid = fit_grid(m, 6)
        back = QuantileGrid.from_json(grid.to_json())
        assert back.k == grid.k
        assert back.degenerate == grid.degenerate
        for a, b in zip(back.boundaries, grid.boundaries):
            assert np.array_equal(a, b)

    def test_bad_schema_rejected(self):
        with pytest.raises(InvalidInputError):
            QuantileGrid.from_json('{"schema": "other"}')
