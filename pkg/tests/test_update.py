"""Tests for change classification, global ephemerality and delta maps."""

import numpy as np
import pytest

from ephemap.config import make_config
from ephemap.errors import MapUpdateError
from ephemap.model import AttributedPointCloud
from ephemap.spatial import CoverageGrid
from ephemap.update import (
    DeltaMap,
    PointCategory,
    bayes_update_global,
    classify_points,
    export_heatmap,
    extract_static_map,
    merge_and_update,
    objectness_factors,
    replay_delta,
    rollback_delta,
    update_deleted,
    update_emerged,
)


def _fixture_maps():
    """
    One point of each category.

    Map: A coexists, B sits in a cell the session observed, C lies outside it.
    Session: a matches A, b sits in a cell the map observed, c is new ground.
    """
    prev = AttributedPointCloud(
        np.array([[0.05, 0.05, 0.05], [2.5, 0.5, 0.5], [10.5, 0.5, 0.5]]),
        [0.3, 0.3, 0.3],
        [0.4, 0.6, 0.2],
    )
    session = AttributedPointCloud(
        np.array([[0.1, 0.05, 0.05], [5.5, 0.5, 0.5], [20.5, 0.5, 0.5]]),
        [0.2, 0.3, 0.25],
        [0.5, 0.5, 0.5],
    )
    prev_cov = CoverageGrid.from_cells(np.array([[0, 0, 0], [2, 0, 0], [5, 0, 0], [10, 0, 0]]), 1.0)
    curr_cov = CoverageGrid.from_cells(np.array([[0, 0, 0], [2, 0, 0], [5, 0, 0], [20, 0, 0]]), 1.0)
    return prev, session, prev_cov, curr_cov


class TestClassify:
    """Tests for the five change categories."""

    def test_one_of_each(self):
        prev, session, prev_cov, curr_cov = _fixture_maps()
        cls = classify_points(prev, session, prev_cov, curr_cov, nn_radius=0.2)
        assert [PointCategory.from_code(c) for c in cls.prev] == [
            PointCategory.COEXISTING,
            PointCategory.DELETED,
            PointCategory.PREV_EXPLORED,
        ]
        assert [PointCategory.from_code(c) for c in cls.session] == [
            PointCategory.COEXISTING,
            PointCategory.EMERGED,
            PointCategory.NEWLY_EXPLORED,
        ]
        assert cls.prev_match.tolist() == [0, -1, -1]
        assert cls.session_match.tolist() == [0, -1, -1]

    def test_counts(self):
        prev, session, prev_cov, curr_cov = _fixture_maps()
        counts = classify_points(prev, session, prev_cov, curr_cov, 0.2).counts()
        assert counts[PointCategory.COEXISTING] == 2
        assert sum(counts.values()) == 6

    def test_radius_controls_matching(self):
        prev, session, prev_cov, curr_cov = _fixture_maps()
        cls = classify_points(prev, session, prev_cov, curr_cov, nn_radius=0.01)
        assert cls.prev[0] == PointCategory.DELETED.code
        assert cls.session[0] == PointCategory.EMERGED.code

    def test_missing_coverage(self):
        prev, session, prev_cov, _ = _fixture_maps()
        with pytest.raises(MapUpdateError, match="coverage"):
            classify_points(prev, session, prev_cov, None, 0.2)

    def test_category_codes(self):
        for category in PointCategory:
            assert PointCategory.from_code(category.code) is category


class TestUpdateRules:
    """Tests for the per-category eps_g rules."""

    def test_global_fusion(self):
        assert bayes_update_global(0.5, 0.2) == pytest.approx(0.2)
        assert bayes_update_global(0.99, 0.99) == 0.99

    def test_objectness(self):
        cluster = np.array([[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [0.0, 0.05, 0.0]])
        gamma = objectness_factors(np.vstack([cluster, [[9.0, 9.0, 9.0]]]), radius=0.5, saturation=8)
        assert gamma[:3] == pytest.approx([0.25 ** (1 / 3)] * 3)
        assert gamma[3] == 0.0

    def test_objectness_saturates(self):
        grid = np.stack(np.meshgrid(*[np.arange(3) * 0.1] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
        gamma = objectness_factors(grid, radius=1.0, saturation=10)
        assert np.all(gamma == 1.0)

    def test_deleted(self):
        assert update_deleted(0.5, 1.0) == pytest.approx(0.99)
        assert update_deleted(0.5, 0.0) == pytest.approx(0.01)
        assert update_deleted(0.3, 0.5) == pytest.approx(0.3)

    def test_emerged(self):
        assert update_emerged(0.3, 1.0, 0.6) == pytest.approx(0.18)
        assert update_emerged(0.3, 0.0, 0.6) == pytest.approx(0.36)
        assert update_emerged(0.99, 0.0, 1.0) == 0.99

    def test_deleted_strictly_increasing_in_gamma(self):
        gamma = np.linspace(0.05, 0.95, 50)
        for prev in (0.1, 0.3, 0.5, 0.7):
            out = update_deleted(np.full(len(gamma), prev), gamma)
            assert np.all(np.diff(out) > 0.0)

    def test_emerged_monotone(self):
        gamma = np.linspace(0.0, 1.0, 50)
        out = update_emerged(np.full(len(gamma), 0.3), gamma, 0.6)
        assert np.all(np.diff(out) < 0.0)
        eps_l = np.linspace(0.05, 0.5, 50)
        out = update_emerged(eps_l, np.full(len(eps_l), 0.5), 0.6)
        assert np.all(np.diff(out) > 0.0)


class TestMergeAndUpdate:
    """Tests for merging a cleaned session into the map."""

    def test_categories_and_values(self):
        prev, session, prev_cov, curr_cov = _fixture_maps()
        config = make_config(nn_radius=0.2, compact_map=False, density_saturation=10)
        result = merge_and_update(prev, session, prev_cov, curr_cov, config, session_id="s2", config_digest="abc")
        new = result.new_map
        assert len(new) == 5
        # Coexisting: fused with the matched session eps_l.
        assert new.eps_g[0] == pytest.approx(bayes_update_global(0.4, 0.2))
        assert new.eps_l[0] == 0.2
        # Deleted with no neighbours: gamma 0 enters the fusion clamped to 0.01.
        assert new.eps_g[1] == pytest.approx(bayes_update_global(0.6, 0.01))
        assert new.eps_g[1] == pytest.approx(0.6 * 0.01 / (0.6 * 0.01 + 0.4 * 0.99))
        # Previously explored: untouched.
        assert new.eps_g[2] == 0.2
        # Emerged (isolated, gamma 0) then newly explored.
        assert new.eps_g[3] == pytest.approx(0.6 * 2.0 * 0.3)
        assert new.eps_g[4] == 0.25

    def test_delta_records(self):
        prev, session, prev_cov, curr_cov = _fixture_maps()
        config = make_config(nn_radius=0.2, compact_map=False)
        delta = merge_and_update(prev, session, prev_cov, curr_cov, config, session_id="s2", config_digest="abc").delta
        assert delta.session_id == "s2"
        assert delta.config_hash == "abc"
        cats = [r.category for r in delta.records]
        assert cats == [
            PointCategory.COEXISTING,
            PointCategory.DELETED,
            PointCategory.EMERGED,
            PointCategory.NEWLY_EXPLORED,
        ]
        emerged = delta.records[2]
        assert emerged.eps_g_before == 0.5
        assert emerged.gamma == 0.0
        assert set(delta.summary()) == {"coexisting", "deleted", "emerged", "newly_explored"}

    def test_empty_session(self):
        prev, _, prev_cov, curr_cov = _fixture_maps()
        with pytest.raises(MapUpdateError, match="empty"):
            merge_and_update(prev, AttributedPointCloud.empty(), prev_cov, curr_cov, make_config())

    def test_compaction(self):
        prev, session, prev_cov, curr_cov = _fixture_maps()
        config = make_config(nn_radius=0.2, compact_map=True, voxel_size=0.5)
        result = merge_and_update(prev, session, prev_cov, curr_cov, config)
        assert len(result.merged) == 5
        assert len(result.new_map) == 5
        assert result.new_map.validate() == []

    def test_neutral_session_is_a_fixed_point(self):
        rng = np.random.default_rng(4)
        positions = rng.uniform(0.0, 10.0, (300, 3))
        prev = AttributedPointCloud(positions, np.full(300, 0.2), rng.uniform(0.01, 0.99, 300))
        session = AttributedPointCloud(positions, rng.uniform(0.495, 0.505, 300), np.full(300, 0.5))
        cov = CoverageGrid.from_cells(np.floor(positions).astype(np.int64), 1.0)
        config = make_config(nn_radius=0.05, compact_map=False)
        new = merge_and_update(prev, session, cov, cov, config).new_map
        assert len(new) == 300
        assert np.max(np.abs(new.eps_g - prev.eps_g)) < 0.01

    @pytest.mark.parametrize("compact", [False, True])
    def test_no_points_invented(self, compact):
        rng = np.random.default_rng(9)
        prev = AttributedPointCloud.from_points(rng.uniform(0.0, 8.0, (400, 3)), 0.3, 0.4)
        session = AttributedPointCloud.from_points(rng.uniform(2.0, 10.0, (350, 3)), 0.2, 0.5)
        prev_cov = CoverageGrid.from_cells(np.floor(prev.positions).astype(np.int64), 1.0)
        curr_cov = CoverageGrid.from_cells(np.floor(session.positions).astype(np.int64), 1.0)
        config = make_config(nn_radius=0.3, compact_map=compact, voxel_size=0.2)
        result = merge_and_update(prev, session, prev_cov, curr_cov, config)
        assert len(result.new_map) <= len(prev) + len(session)
        assert sum(result.classification.counts().values()) == len(prev) + len(session)


class TestReplayRollback:
    """Tests for rebuilding and undoing an update from its delta map."""

    @pytest.mark.parametrize("compact", [False, True])
    def test_replay_reproduces_eps_g(self, compact):
        rng = np.random.default_rng(11)
        prev = AttributedPointCloud(rng.uniform(0, 10, (300, 3)), rng.uniform(0.05, 0.95, 300), rng.uniform(0.05, 0.95, 300))
        session_pts = np.vstack([prev.positions[:150] + rng.normal(0, 0.02, (150, 3)), rng.uniform(0, 14, (100, 3))])
        session = AttributedPointCloud(session_pts, rng.uniform(0.02, 0.45, 250), np.full(250, 0.5))
        prev_cov = CoverageGrid(1.0).add(prev.positions)
        curr_cov = CoverageGrid(1.0).add(session_pts)
        config = make_config(compact_map=compact, voxel_size=0.3)

        result = merge_and_update(prev, session, prev_cov, curr_cov, config)
        replayed = replay_delta(prev, result.delta, config)
        assert np.array_equal(replayed.positions, result.new_map.positions)
        assert np.array_equal(replayed.eps_g, result.new_map.eps_g)

    def test_rollback_restores_previous_map(self):
        prev, session, prev_cov, curr_cov = _fixture_maps()
        config = make_config(nn_radius=0.2, compact_map=False)
        result = merge_and_update(prev, session, prev_cov, curr_cov, config)
        restored = rollback_delta(result.new_map, result.delta, config)
        assert np.array_equal(restored.positions, prev.positions)
        assert np.array_equal(restored.eps_g, prev.eps_g)

    def test_replay_against_wrong_map(self):
        prev, session, prev_cov, curr_cov = _fixture_maps()
        config = make_config(nn_radius=0.2, compact_map=False)
        delta = merge_and_update(prev, session, prev_cov, curr_cov, config).delta
        shifted = AttributedPointCloud(prev.positions + 1.0, prev.eps_l, prev.eps_g)
        with pytest.raises(MapUpdateError, match="does not match"):
            replay_delta(shifted, delta, config)


class TestExtractStaticMap:
    """Tests for global-threshold extraction."""

    def test_strict(self):
        cloud = AttributedPointCloud(np.zeros((3, 3)), [0.5] * 3, [0.2, 0.7, 0.9])
        assert extract_static_map(cloud, 0.7).eps_g.tolist() == [0.2]

    def test_range(self):
        with pytest.raises(ValueError, match="tau_g"):
            extract_static_map(AttributedPointCloud.empty(), 0.0)


def _delta(positions, before, after) -> DeltaMap:
    n = len(positions)
    return DeltaMap(
        "s",
        "",
        np.asarray(positions, dtype=np.float64),
        np.zeros(n, np.int8),
        np.asarray(before, dtype=np.float64),
        np.asarray(after, dtype=np.float64),
        np.zeros(n),
    )


class TestHeatmap:
    """Tests for the change-frequency heatmap."""

    def test_counts_and_normalisation(self):
        a = _delta([[0.5, 0.5, 0.0], [0.6, 0.4, 0.0], [3.5, 0.5, 0.0]], [0.5, 0.5, 0.5], [0.9, 0.2, 0.55])
        b = _delta([[0.2, 0.2, 0.0]], [0.3], [0.8])
        heat = export_heatmap([a, b], cell=1.0, floor=0.1)
        assert heat.cells.tolist() == [[0, 0, 0], [3, 0, 0]]
        assert heat.counts.tolist() == [3, 0]
        assert heat.values.tolist() == [1.0, 0.0]
        assert heat.value_at(np.array([0.9, 0.9, 0.5])) == 1.0
        assert heat.value_at(np.array([50.0, 0.0, 0.0])) == 0.0

    def test_nothing_above_floor(self):
        heat = export_heatmap([_delta([[0.0, 0.0, 0.0]], [0.5], [0.52])], cell=1.0, floor=0.1)
        assert heat.values.tolist() == [0.0]

    def test_empty_deltas(self):
        heat = export_heatmap([_delta(np.zeros((0, 3)), [], [])], cell=1.0)
        assert len(heat) == 0

    def test_requires_input(self):
        with pytest.raises(ValueError, match="at least one"):
            export_heatmap([], cell=1.0)
