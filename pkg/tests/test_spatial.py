"""Tests for neighbour search, voxel compaction and coverage grids."""

import numpy as np
import pytest

from ephemap.model import AttributedPointCloud
from ephemap.spatial import (
    CoverageGrid,
    KdIndex,
    build_coverage,
    cell_keys,
    pack_keys,
    squared_distances,
    unpack_keys,
    voxel_downsample,
)
from ephemap.synth import linear_knn


class TestKdIndex:
    """Tests for exact k-nearest-neighbour search."""

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            KdIndex(np.zeros((0, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            KdIndex(np.array([[0.0, np.nan, 0.0]]))

    def test_ties_broken_by_id(self):
        points = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 3.0]])
        result = KdIndex(points).knn(np.zeros(3), 3)
        assert [i for i, _ in result] == [0, 1, 2]
        assert [d for _, d in result] == [1.0, 1.0, 1.0]

    def test_tie_at_kth_neighbour(self):
        points = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.5, 0.0, 0.0]])
        ids, _ = KdIndex(points).knn_batch(np.zeros((1, 3)), 2)
        assert ids.tolist() == [[2, 0]]

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(4)
        points = rng.uniform(-10, 10, size=(500, 3))
        queries = rng.uniform(-12, 12, size=(50, 3))
        ids, sq = KdIndex(points).knn_batch(queries, 7)
        for q, row_ids, row_sq in zip(queries, ids, sq):
            ref_ids, ref_sq = linear_knn(points, q, 7)
            assert row_ids.tolist() == ref_ids.tolist()
            assert np.array_equal(row_sq, ref_sq)

    def test_k_larger_than_set(self):
        ids, sq = KdIndex(np.eye(3)).knn_batch(np.zeros((2, 3)), 10)
        assert ids.shape == (2, 3)
        assert np.all(ids >= 0)

    def test_upper_bound(self):
        points = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
        ids, sq = KdIndex(points).knn_batch(np.zeros((1, 3)), 3, upper_bound=2.0)
        assert ids.tolist() == [[0, 1, -1]]
        assert sq[0, :2].tolist() == [1.0, 4.0]
        assert np.isinf(sq[0, 2])

    def test_nearest_with_range(self):
        index = KdIndex(np.array([[0.0, 0.0, 0.0]]))
        ids, dist = index.nearest(np.array([[0.1, 0.0, 0.0], [5.0, 0.0, 0.0]]), max_distance=1.0)
        assert ids.tolist() == [0, -1]
        assert dist[0] == pytest.approx(0.1)
        assert np.isinf(dist[1])

    def test_radius_count_excludes_member(self):
        points = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [5.0, 0.0, 0.0]])
        index = KdIndex(points)
        assert index.radius_count(points[0], 0.5) == 2
        assert index.radius_count(points[0], 0.5, exclude_member=False) == 3
        assert index.radius_count(np.array([0.0, 0.0, 0.05]), 0.5) == 3

    def test_within(self):
        index = KdIndex(np.zeros((1, 3)))
        mask = index.within(np.array([[0.0, 0.0, 0.2], [0.0, 0.0, 0.3]]), 0.25)
        assert mask.tolist() == [True, False]

    def test_squared_distances(self):
        d = squared_distances(np.array([[1.0, 2.0, 2.0]]), np.zeros(3))
        assert d.tolist() == [9.0]


class TestCellKeys:
    """Tests for integer cell coordinates."""

    def test_floor_semantics(self):
        cells = cell_keys(np.array([[0.05, -0.05, 1.0]]), 0.1)
        assert cells.tolist() == [[0, -1, 10]]

    def test_pack_unpack(self):
        cells = np.array([[0, 0, 0], [-5, 7, -1000], [1000, -3, 2]])
        assert unpack_keys(pack_keys(cells)).tolist() == cells.tolist()

    def test_pack_out_of_range(self):
        with pytest.raises(ValueError, match="packable"):
            pack_keys(np.array([[1 << 22, 0, 0]]))


class TestVoxelDownsample:
    """Tests for map compaction."""

    def test_centroid_and_max(self):
        cloud = AttributedPointCloud(
            np.array([[0.01, 0.01, 0.01], [0.03, 0.05, 0.07], [1.05, 0.0, 0.0]]),
            [0.2, 0.6, 0.4],
            [0.9, 0.1, 0.3],
        )
        out = voxel_downsample(cloud, 0.1)
        assert len(out) == 2
        assert out.positions[0] == pytest.approx([0.02, 0.03, 0.04])
        assert out.eps_l.tolist() == [0.6, 0.4]
        assert out.eps_g.tolist() == [0.9, 0.3]

    def test_sorted_by_cell(self):
        cloud = AttributedPointCloud.from_points(np.array([[5.0, 0.0, 0.0], [-5.0, 0.0, 0.0]]))
        out = voxel_downsample(cloud, 1.0)
        assert out.positions[:, 0].tolist() == [-5.0, 5.0]

    def test_empty(self):
        assert len(voxel_downsample(AttributedPointCloud.empty(), 0.1)) == 0

    def test_bad_cell(self):
        with pytest.raises(ValueError, match="> 0"):
            voxel_downsample(AttributedPointCloud.empty(), 0.0)


class TestCoverageGrid:
    """Tests for observed-cell sets."""

    def test_contains(self):
        grid = build_coverage(np.array([[0.5, 0.5, 0.5], [3.2, 0.1, 0.1]]), 1.0)
        assert len(grid) == 2
        mask = grid.contains(np.array([[0.9, 0.1, 0.9], [1.5, 0.5, 0.5], [3.9, 0.9, 0.0]]))
        assert mask.tolist() == [True, False, True]

    def test_empty_contains_nothing(self):
        assert CoverageGrid(1.0).contains(np.zeros((3, 3))).tolist() == [False] * 3

    def test_union(self):
        a = CoverageGrid.from_cells(np.array([[0, 0, 0]]), 1.0)
        b = CoverageGrid.from_cells(np.array([[0, 0, 0], [1, 2, 3]]), 1.0)
        merged = a.union(b)
        assert merged.cells().tolist() == [[0, 0, 0], [1, 2, 3]]

    def test_union_cell_mismatch(self):
        with pytest.raises(ValueError, match="different cell sizes"):
            CoverageGrid(1.0).union(CoverageGrid(0.5))

    def test_add_is_persistent(self):
        grid = CoverageGrid(1.0)
        grown = grid.add(np.array([[0.5, 0.5, 0.5]]))
        assert len(grid) == 0
        assert len(grown) == 1
