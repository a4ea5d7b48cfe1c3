"""Tests for scene files, ray casting and session rendering."""

import math
from dataclasses import replace

import numpy as np
import pytest

from ephemap.errors import SceneError
from ephemap.model import Pose
from ephemap.synth import (
    Actor,
    Primitive,
    PrimitiveClass,
    Scenario,
    ScenarioRegistry,
    SceneEdit,
    Shape,
    cast_rays,
    drift_corridor_scenario,
    dump_scene,
    get_registry,
    load_scene,
    parking_lot_scenario,
    parse_scene,
    render_session,
    resolve_scene,
    session_gt_poses,
)
from ephemap.synth.render import NO_HIT, ray_box_distances

from .scenes import room_scene

ORIGIN = np.zeros(3)
PLUS_X = np.array([[1.0, 0.0, 0.0]])

MINIMAL_SCENE = """\
name = "tiny"
sessions = 1

[trajectory]
start = [0, 0, 1]
end = [1, 0, 1]
scans = 2

[[primitive]]
name = "floor"
center = [0, 0, 0]
size = [10, 10, 0]
shape = "plane"
"""


class TestRayBox:
    """Tests for the slab intersection."""

    def test_hit(self):
        box = Primitive("b", (5.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        assert ray_box_distances(ORIGIN, PLUS_X, box)[0] == pytest.approx(4.0)

    def test_miss(self):
        box = Primitive("b", (5.0, 5.0, 0.0), (2.0, 2.0, 2.0))
        assert np.isinf(ray_box_distances(ORIGIN, PLUS_X, box)[0])

    def test_behind(self):
        box = Primitive("b", (-5.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        assert np.isinf(ray_box_distances(ORIGIN, PLUS_X, box)[0])

    def test_start_inside_misses(self):
        box = Primitive("b", (0.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        assert np.isinf(ray_box_distances(ORIGIN, PLUS_X, box)[0])

    def test_plane(self):
        floor = Primitive("floor", (0.0, 0.0, 0.0), (10.0, 10.0, 0.0), shape=Shape.PLANE)
        down = np.array([[0.0, 0.0, -1.0]])
        assert ray_box_distances(np.array([0.0, 0.0, 2.0]), down, floor)[0] == pytest.approx(2.0)

    def test_yawed_box(self):
        box = Primitive("b", (5.0, 0.0, 0.0), (2.0, 2.0, 2.0), yaw=45.0)
        assert ray_box_distances(ORIGIN, PLUS_X, box)[0] == pytest.approx(5.0 - math.sqrt(2.0))


class TestCastRays:
    """Tests for first-hit selection."""

    def test_nearest_box_wins(self):
        near = Primitive("near", (3.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        far = Primitive("far", (8.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        dist, hit = cast_rays(ORIGIN, PLUS_X, [far, near], max_range=50.0)
        assert dist[0] == pytest.approx(2.5)
        assert hit[0] == 1

    def test_max_range(self):
        box = Primitive("b", (30.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        dist, hit = cast_rays(ORIGIN, PLUS_X, [box], max_range=20.0)
        assert np.isinf(dist[0])
        assert hit[0] == NO_HIT

    def test_no_boxes(self):
        dist, hit = cast_rays(ORIGIN, np.vstack([PLUS_X, PLUS_X]), [], max_range=20.0)
        assert hit.tolist() == [NO_HIT, NO_HIT]


class TestSceneModel:
    """Tests for primitives, actors and edits."""

    def test_contains_with_margin(self):
        box = Primitive("b", (0.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        pts = np.array([[0.9, 0.0, 0.0], [1.2, 0.0, 0.0]])
        assert box.contains(pts).tolist() == [True, False]
        assert box.contains(pts, margin=0.3).tolist() == [True, True]

    def test_actor_motion(self):
        actor = Actor("a", (1.0, 1.0, 1.0), (0.0, 0.0, 0.5), velocity=(2.0, 0.0, 0.0))
        prim = actor.at(1.5)
        assert prim.center == (3.0, 0.0, 0.5)
        assert prim.cls is PrimitiveClass.DYNAMIC

    def test_actor_activity(self):
        actor = Actor("a", (1.0, 1.0, 1.0), (0.0, 0.0, 0.5), active_scans=(2, 3), sessions=(1,))
        assert actor.is_active(1, 2)
        assert not actor.is_active(1, 4)
        assert not actor.is_active(2, 2)

    def test_primitives_for_applies_edits(self):
        spec = room_scene()
        assert "crate" in [p.name for p in spec.primitives_for(1)]
        assert "crate" not in [p.name for p in spec.primitives_for(2)]

    def test_edit_add_then_remove(self):
        spec = replace(
            room_scene(sessions=3),
            edits=(SceneEdit(2, "remove", "crate"), SceneEdit(3, "add", "crate")),
        )
        names = [[p.name for p in spec.primitives_for(t)] for t in (1, 2, 3)]
        assert ["crate" in n for n in names] == [True, False, True]

    def test_class_codes(self):
        assert [c.code for c in PrimitiveClass] == [0, 1, 2]

    def test_duplicate_names(self):
        spec = room_scene()
        dup = replace(spec, primitives=spec.primitives + (spec.primitives[0],))
        with pytest.raises(SceneError, match="duplicate primitive names: floor"):
            dup.validate()

    def test_edit_unknown_primitive(self):
        spec = replace(room_scene(), edits=(SceneEdit(2, "remove", "sofa"),))
        with pytest.raises(SceneError, match="unknown primitive 'sofa'"):
            spec.validate()

    def test_edit_session_out_of_range(self):
        spec = replace(room_scene(), edits=(SceneEdit(5, "remove", "crate"),))
        with pytest.raises(SceneError, match="outside 1..2"):
            spec.validate()


class TestSceneFile:
    """Tests for the TOML scene dialect."""

    def test_minimal(self):
        spec = parse_scene(MINIMAL_SCENE)
        assert spec.name == "tiny"
        assert spec.primitives[0].shape is Shape.PLANE
        assert spec.trajectory.scans == 2

    @pytest.mark.parametrize("factory", [parking_lot_scenario, drift_corridor_scenario])
    def test_dump_then_parse(self, factory):
        spec = factory()
        assert parse_scene(dump_scene(spec)) == spec

    def test_missing_key_names_block_line(self):
        text = MINIMAL_SCENE + '\n[[primitive]]\nname = "box"\ncenter = [1, 1, 1]\n'
        with pytest.raises(SceneError, match=r"bad\.toml:15: primitive block missing key 'size'"):
            parse_scene(text, source="bad.toml")

    def test_syntax_error_line(self):
        with pytest.raises(SceneError, match=r"bad\.toml:2: parse error"):
            parse_scene('name = "x"\nsessions = \n', source="bad.toml")

    def test_plane_needs_zero_extent(self):
        text = MINIMAL_SCENE.replace("size = [10, 10, 0]", "size = [10, 10, 1]")
        with pytest.raises(SceneError, match="zero extent"):
            parse_scene(text)

    def test_missing_trajectory(self):
        with pytest.raises(SceneError, match="missing required key 'trajectory'"):
            parse_scene('name = "x"\n')

    def test_load_scene(self, tmp_path):
        path = tmp_path / "tiny.toml"
        path.write_text(MINIMAL_SCENE)
        assert load_scene(path).name == "tiny"


class TestRenderSession:
    """Tests for rendering labeled sessions."""

    def test_deterministic_and_thread_independent(self):
        spec = room_scene()
        a = render_session(spec, 1)
        b = render_session(spec, 1, threads=4)
        assert len(a) == 5
        for sa, sb in zip(a.session.scans, b.session.scans):
            assert np.array_equal(sa.points, sb.points)
        assert np.array_equal(a.all_labels(), b.all_labels())

    def test_seed_changes_output(self):
        spec = room_scene()
        a = render_session(spec, 1).session.scans[0].points
        b = render_session(spec.with_seed(4), 1).session.scans[0].points
        assert not np.array_equal(a, b)

    def test_actor_only_in_active_scans(self):
        labeled = render_session(room_scene(), 1)
        dynamic = PrimitiveClass.DYNAMIC.code
        per_scan = [int(np.sum(lab == dynamic)) for lab in labeled.labels]
        assert per_scan[1] > 0
        assert per_scan[2] > 0
        assert per_scan[0] == per_scan[3] == per_scan[4] == 0
        assert len(labeled.points_from("walker")) == sum(per_scan)

    def test_session_two_has_no_crate_or_walker(self):
        labeled = render_session(room_scene(), 2)
        counts = labeled.label_counts()
        assert counts[PrimitiveClass.DYNAMIC] == 0
        assert counts[PrimitiveClass.TRANSIENT] == 0
        assert counts[PrimitiveClass.STATIC] > 0

    def test_reported_poses_are_local(self):
        spec = room_scene()
        labeled = render_session(spec, 2)
        assert labeled.session.poses[0].allclose(Pose.identity())
        for reported, gt in zip(labeled.session.poses, labeled.local_gt_poses):
            assert reported.allclose(gt, atol=1e-9)

    def test_world_points_lie_in_room(self):
        labeled = render_session(room_scene(), 1)
        pts = labeled.world_points()
        assert np.all(np.abs(pts[:, 0]) <= 8.35)
        assert np.all(np.abs(pts[:, 1]) <= 5.35)

    def test_gt_poses_follow_trajectory(self):
        spec = room_scene()
        poses = session_gt_poses(spec, 1)
        assert len(poses) == 5
        assert poses[-1].translation[0] - poses[0].translation[0] == pytest.approx(8.0)

    def test_bounds_violation(self):
        spec = room_scene()
        spec = replace(spec, trajectory=replace(spec.trajectory, end=(12.0, 0.0, 1.2)))
        with pytest.raises(SceneError, match="leaves the scene bounds"):
            render_session(spec, 1)

    def test_session_out_of_range(self):
        with pytest.raises(SceneError, match="session 3 outside 1..2"):
            render_session(room_scene(), 3)


class TestParkingLot:
    """Tests for the built-in parking deck."""

    def test_downward_rays_return(self):
        spec = parking_lot_scenario()
        labeled = render_session(spec, 1)
        downward = (spec.sensor.rings // 2) * spec.sensor.azimuths
        for scan in labeled.session.scans:
            assert np.count_nonzero(scan.points[:, 2] < 0.0) >= 0.99 * downward

    def test_fixed_structure_not_point_symmetric(self):
        spec = parking_lot_scenario()
        fixed = {(p.center, p.size) for p in spec.primitives if p.cls is PrimitiveClass.STATIC and p.present}
        turned = {((-c[0], -c[1], c[2]), s) for c, s in fixed}
        assert len(fixed - turned) >= 5


class TestRegistry:
    """Tests for scenario lookup."""

    def test_builtins_and_aliases(self):
        registry = get_registry()
        assert registry.get("lot") is registry.get("parking-lot")
        assert registry.get("corridor").name == "drift-corridor"
        assert registry.get("nope") is None
        assert {s.name for s in registry.list_all()} >= {"parking-lot", "drift-corridor"}

    def test_resolve_with_seed(self):
        assert resolve_scene("parking", seed=99).seed == 99

    def test_resolve_file(self, tmp_path):
        path = tmp_path / "tiny.toml"
        path.write_text(MINIMAL_SCENE)
        assert resolve_scene(str(path)).name == "tiny"

    def test_resolve_unknown(self):
        with pytest.raises(SceneError, match="Unknown scenario or missing scene file"):
            resolve_scene("no-such-scene")

    def test_scene_dir_skips_bad_files(self, tmp_path):
        (tmp_path / "tiny.toml").write_text(MINIMAL_SCENE)
        (tmp_path / "broken.toml").write_text("name = \n")
        registry = ScenarioRegistry()
        assert registry.load_scene_dir(tmp_path) == 1
        assert registry.get("tiny").build().primitives[0].name == "floor"

    def test_register(self):
        registry = ScenarioRegistry()
        registry.register(Scenario("room", room_scene, aliases=["box"]))
        assert registry.get("box").all_names == ["room", "box"]
