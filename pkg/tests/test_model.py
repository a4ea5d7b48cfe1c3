"""Tests for poses, sessions, point clouds and session validation."""

import math

import numpy as np
import pytest

from ephemap.config import make_config
from ephemap.model import (
    EPS_MAX,
    EPS_MIN,
    AttributedPointCloud,
    Pose,
    Scan,
    Session,
    bayes_fuse,
    clamp_eph,
    validate_session,
)


def _session(n: int = 3, points: int = 10) -> Session:
    rng = np.random.default_rng(0)
    scans = [Scan(rng.uniform(-5, 5, size=(points, 3)), timestamp=float(i)) for i in range(n)]
    poses = [Pose.from_xyz_rpy(i, 0.0, 0.0) for i in range(n)]
    return Session(scans, poses)


class TestClamp:
    """Tests for the ephemerality clamp."""

    def test_bounds(self):
        assert clamp_eph(0.0) == EPS_MIN
        assert clamp_eph(1.0) == EPS_MAX
        assert clamp_eph(0.42) == 0.42

    def test_array(self):
        out = clamp_eph(np.array([-1.0, 0.5, 2.0]))
        assert out.tolist() == [EPS_MIN, 0.5, EPS_MAX]

    def test_nan_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            clamp_eph(float("nan"))


class TestBayesFuse:
    """Tests for binary Bayes fusion."""

    def test_neutral_evidence_is_identity(self):
        for prior in (0.01, 0.3, 0.77, 0.99):
            assert bayes_fuse(prior, 0.5) == prior

    def test_neutral_prior_takes_evidence(self):
        assert bayes_fuse(0.5, 0.8) == pytest.approx(0.8)

    def test_agreeing_evidence_reinforces(self):
        fused = bayes_fuse(0.2, 0.2)
        assert fused == pytest.approx(0.04 / 0.68)
        assert fused < 0.2

    def test_vectorised(self):
        fused = bayes_fuse(np.array([0.5, 0.9]), np.array([0.9, 0.5]))
        assert fused == pytest.approx([0.9, 0.9])


class TestPose:
    """Tests for rigid transforms."""

    def test_inverse_composes_to_identity(self):
        pose = Pose.from_xyz_rpy(1.0, -2.0, 0.5, roll=0.1, pitch=-0.2, yaw=0.7)
        assert (pose @ pose.inverse()).allclose(Pose.identity())
        assert (pose.inverse() @ pose).allclose(Pose.identity())

    def test_apply(self):
        pose = Pose.from_xyz_rpy(1.0, 0.0, 0.0, yaw=math.pi / 2)
        out = pose.apply(np.array([[1.0, 0.0, 0.0]]))
        assert out == pytest.approx(np.array([[1.0, 1.0, 0.0]]))

    def test_matrix_round_trip(self):
        pose = Pose.from_xyz_rpy(3.0, 2.0, 1.0, yaw=0.3)
        assert Pose.from_matrix(pose.as_matrix()).allclose(pose)
        assert Pose.from_matrix(pose.as_matrix()[:3]).allclose(pose)

    def test_bad_matrix_shape(self):
        with pytest.raises(ValueError, match="3x4 or 4x4"):
            Pose.from_matrix(np.eye(3))

    def test_composition_is_associative(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a, b, c = (
                Pose.from_xyz_rpy(*rng.uniform(-5.0, 5.0, 3), *rng.uniform(-math.pi, math.pi, 3)) for _ in range(3)
            )
            assert ((a @ b) @ c).allclose(a @ (b @ c))
            points = rng.uniform(-5.0, 5.0, (4, 3))
            assert np.allclose((a @ b).apply(points), a.apply(b.apply(points)), atol=1e-12)
            assert (a @ a.inverse()).allclose(Pose.identity())
            assert np.allclose(a.inverse().apply(a.apply(points)), points, atol=1e-12)

    def test_is_valid(self):
        assert Pose.identity().is_valid()
        assert not Pose(2.0 * np.eye(3), np.zeros(3)).is_valid()
        assert not Pose(np.eye(3), [np.nan, 0.0, 0.0]).is_valid()

    def test_distance_to(self):
        a = Pose.identity()
        b = Pose.from_xyz_rpy(3.0, 4.0, 0.0, yaw=0.25)
        trans, rot = a.distance_to(b)
        assert trans == pytest.approx(5.0)
        assert rot == pytest.approx(0.25)

    def test_yaw(self):
        assert Pose.from_xyz_rpy(0, 0, 0, yaw=-1.2).yaw == pytest.approx(-1.2)

    def test_immutable(self):
        pose = Pose.identity()
        with pytest.raises(ValueError):
            pose.translation[0] = 1.0


class TestAttributedPointCloud:
    """Tests for the attributed cloud container."""

    def test_from_points_defaults(self):
        cloud = AttributedPointCloud.from_points(np.zeros((4, 3)))
        assert len(cloud) == 4
        assert cloud.eps_l.tolist() == [0.5] * 4
        assert cloud.eps_g.tolist() == [0.5] * 4

    def test_channel_length_mismatch(self):
        with pytest.raises(ValueError, match="point count"):
            AttributedPointCloud(np.zeros((3, 3)), np.zeros(3), np.zeros(2))

    def test_bad_shape(self):
        with pytest.raises(ValueError, match=r"\(N, 3\)"):
            AttributedPointCloud.from_points(np.zeros((3, 2)))

    def test_subset_and_concat(self):
        cloud = AttributedPointCloud(np.arange(12.0).reshape(4, 3), [0.1, 0.2, 0.3, 0.4], [0.5] * 4)
        part = cloud.subset(cloud.eps_l > 0.25)
        assert len(part) == 2
        both = AttributedPointCloud.concat([part, cloud])
        assert len(both) == 6
        assert both.eps_l[:2].tolist() == [0.3, 0.4]

    def test_concat_empty(self):
        assert len(AttributedPointCloud.concat([])) == 0

    def test_replace_keeps_positions(self):
        cloud = AttributedPointCloud.from_points(np.ones((2, 3)))
        out = cloud.replace(eps_g=np.array([0.2, 0.3]))
        assert out.eps_g.tolist() == [0.2, 0.3]
        assert out.eps_l.tolist() == [0.5, 0.5]
        assert np.array_equal(out.positions, cloud.positions)

    def test_validate(self):
        good = AttributedPointCloud.from_points(np.zeros((2, 3)))
        assert good.validate() == []
        bad = AttributedPointCloud(np.zeros((2, 3)), [0.5, 0.5], [0.0, 0.5])
        assert bad.validate() == ["eps_g outside [0.01, 0.99]"]

    def test_transformed(self):
        cloud = AttributedPointCloud.from_points(np.zeros((1, 3)), eps_g=0.3)
        moved = cloud.transformed(Pose.from_xyz_rpy(1.0, 2.0, 3.0))
        assert moved.positions.tolist() == [[1.0, 2.0, 3.0]]
        assert moved.eps_g.tolist() == [0.3]


class TestValidateSession:
    """Tests for session invariant checks."""

    def test_valid(self):
        report = validate_session(_session(), make_config())
        assert report.ok
        assert str(report) == "valid"

    def test_length_mismatch(self):
        session = _session()
        broken = Session(session.scans, session.poses[:2])
        report = validate_session(broken, make_config())
        assert any(i.startswith("length-mismatch") for i in report.issues)

    def test_empty(self):
        report = validate_session(Session((), ()), make_config())
        assert report.issues == ["empty-session: no scans"]

    def test_non_monotone_timestamps(self):
        session = _session()
        scans = list(session.scans)
        scans[2] = Scan(scans[2].points, timestamp=0.5)
        report = validate_session(Session(scans, session.poses), make_config())
        assert report.issues == ["non-monotone-timestamp: scan 2 at 0.5"]

    def test_empty_scan(self):
        session = _session()
        scans = list(session.scans)
        scans[1] = Scan(np.zeros((0, 3)), timestamp=1.0)
        report = validate_session(Session(scans, session.poses), make_config())
        assert report.issues == ["empty-scan: scan 1"]

    def test_non_finite_point(self):
        session = _session()
        pts = np.array(session.scans[0].points)
        pts[3, 1] = np.inf
        scans = (Scan(pts, timestamp=0.0),) + session.scans[1:]
        report = validate_session(Session(scans, session.poses), make_config())
        assert report.issues == ["non-finite-point: scan 0"]

    def test_out_of_range(self):
        session = _session()
        scans = (Scan([[100.0, 0.0, 0.0]], timestamp=0.0),) + session.scans[1:]
        report = validate_session(Session(scans, session.poses), make_config(max_range=80.0))
        assert len(report.issues) == 1
        assert report.issues[0].startswith("out-of-range: scan 0 has 1 points")

    def test_invalid_pose(self):
        session = _session()
        poses = list(session.poses)
        poses[1] = Pose(1.01 * np.eye(3), np.zeros(3))
        report = validate_session(Session(session.scans, poses), make_config())
        assert report.issues == ["invalid-pose: pose 1 is not a rigid transform"]

    def test_reports_every_violation(self):
        session = _session()
        scans = list(session.scans)
        scans[1] = Scan(np.zeros((0, 3)), timestamp=5.0)
        poses = list(session.poses)
        poses[0] = Pose(np.zeros((3, 3)), np.zeros(3))
        report = validate_session(Session(scans, poses), make_config())
        assert len(report.issues) == 3
