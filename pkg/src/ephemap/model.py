"""Core data types: poses, scans, sessions and attributed point clouds."""

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .config import PipelineConfig

EPS_MIN = 0.01
EPS_MAX = 0.99
EPS_INIT = 0.5

ArrayLike = Union[float, np.ndarray]


def clamp_eph(value: ArrayLike) -> ArrayLike:
    """
    Clamp an ephemerality value (or array) into [EPS_MIN, EPS_MAX].

    Raises:
        ValueError: If any input is NaN or infinite
    """
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("Ephemerality must be finite")
    out = np.minimum(np.maximum(arr, EPS_MIN), EPS_MAX)
    if out.ndim == 0:
        return float(out)
    return out


def bayes_fuse(prev: ArrayLike, evidence: ArrayLike) -> ArrayLike:
    """
    Binary Bayes fusion of a prior belief with one evidence probability (unclamped).

    Evidence of exactly 0.5 returns the prior unchanged.
    """
    num = evidence * prev
    fused = np.where(evidence == 0.5, prev, num / (num + (1.0 - evidence) * (1.0 - prev)))
    if np.ndim(fused) == 0:
        return float(fused)
    return fused


def _as_points(points: object, name: str = "points") -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: x_out = rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        """Build from a 4x4 or 3x4 homogeneous matrix."""
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape not in ((3, 4), (4, 4)):
            raise ValueError(f"Pose matrix must be 3x4 or 4x4, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, quat_xyzw: np.ndarray, translation: np.ndarray) -> "Pose":
        return cls(Rotation.from_quat(quat_xyzw).as_matrix(), translation)

    @classmethod
    def from_xyz_rpy(
        cls, x: float, y: float, z: float, roll: float = 0.0, pitch: float = 0.0, yaw: float = 0.0
    ) -> "Pose":
        """Build from a position and intrinsic roll/pitch/yaw angles in radians."""
        rot = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
        return cls(rot, [x, y, z])

    @classmethod
    def exp(cls, delta: np.ndarray) -> "Pose":
        """Pose from a 6-vector (rotation vector, translation)."""
        delta = np.asarray(delta, dtype=np.float64)
        return cls(Rotation.from_rotvec(delta[:3]).as_matrix(), delta[3:])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def as_quaternion(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_quat()

    @property
    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def compose(self, other: "Pose") -> "Pose":
        """Return self ∘ other (other applied first)."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points)
        return pts @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(self.translation))):
            return False
        ortho = np.max(np.abs(r.T @ r - np.eye(3))) <= tol
        return bool(ortho and abs(np.linalg.det(r) - 1.0) <= tol)

    def distance_to(self, other: "Pose") -> tuple[float, float]:
        """Translation (m) and rotation (rad) difference to another pose."""
        rel = self.inverse() @ other
        angle = float(np.linalg.norm(Rotation.from_matrix(rel.rotation).as_rotvec()))
        return float(np.linalg.norm(self.translation - other.translation)), angle

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )


@dataclass(frozen=True, eq=False)
class Scan:
    """One LiDAR sweep in the sensor frame."""

    points: np.ndarray
    timestamp: float = 0.0
    sensor_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        pts = _as_points(self.points, "scan points").copy()
        origin = np.array(self.sensor_origin, dtype=np.float64).reshape(3)
        pts.setflags(write=False)
        origin.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "sensor_origin", origin)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    def __len__(self) -> int:
        return len(self.points)

    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.points - self.sensor_origin, axis=1)


@dataclass(frozen=True, eq=False)
class Session:
    """Ordered (scan, pose) pairs in one local frame."""

    scans: tuple[Scan, ...]
    poses: tuple[Pose, ...]
    frame_id: str = "local"
    session_id: str = "session"
    sensor_id: str = "lidar"

    def __post_init__(self) -> None:
        object.__setattr__(self, "scans", tuple(self.scans))
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self) -> int:
        return len(self.scans)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([s.timestamp for s in self.scans])

    def with_poses(self, poses: list[Pose], frame_id: Optional[str] = None) -> "Session":
        return Session(
            self.scans,
            tuple(poses),
            frame_id=frame_id or self.frame_id,
            session_id=self.session_id,
            sensor_id=self.sensor_id,
        )


@dataclass(frozen=True, eq=False)
class AttributedPointCloud:
    """Points with local and global ephemerality channels."""

    positions: np.ndarray
    eps_l: np.ndarray
    eps_g: np.ndarray
    frame_id: str = "map"

    def __post_init__(self) -> None:
        pos = _as_points(self.positions, "positions").copy()
        n = len(pos)
        eps_l = np.array(self.eps_l, dtype=np.float64).reshape(-1)
        eps_g = np.array(self.eps_g, dtype=np.float64).reshape(-1)
        if len(eps_l) != n or len(eps_g) != n:
            raise ValueError("Ephemerality channels must match the point count")
        for arr in (pos, eps_l, eps_g):
            arr.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "eps_l", eps_l)
        object.__setattr__(self, "eps_g", eps_g)

    @classmethod
    def from_points(
        cls,
        points: np.ndarray,
        eps_l: float = EPS_INIT,
        eps_g: float = EPS_INIT,
        frame_id: str = "map",
    ) -> "AttributedPointCloud":
        pts = _as_points(points)
        n = len(pts)
        return cls(pts, np.full(n, eps_l), np.full(n, eps_g), frame_id)

    @classmethod
    def empty(cls, frame_id: str = "map") -> "AttributedPointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0), frame_id)

    def __len__(self) -> int:
        return len(self.positions)

    def subset(self, mask_or_index: np.ndarray) -> "AttributedPointCloud":
        return AttributedPointCloud(
            self.positions[mask_or_index],
            self.eps_l[mask_or_index],
            self.eps_g[mask_or_index],
            self.frame_id,
        )

    def replace(
        self, eps_l: Optional[np.ndarray] = None, eps_g: Optional[np.ndarray] = None
    ) -> "AttributedPointCloud":
        return AttributedPointCloud(
            self.positions,
            self.eps_l if eps_l is None else eps_l,
            self.eps_g if eps_g is None else eps_g,
            self.frame_id,
        )

    def transformed(self, pose: Pose) -> "AttributedPointCloud":
        return AttributedPointCloud(pose.apply(self.positions), self.eps_l, self.eps_g, self.frame_id)

    @staticmethod
    def concat(clouds: list["AttributedPointCloud"], frame_id: str = "map") -> "AttributedPointCloud":
        if not clouds:
            return AttributedPointCloud.empty(frame_id)
        return AttributedPointCloud(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.eps_l for c in clouds]),
            np.concatenate([c.eps_g for c in clouds]),
            frame_id,
        )

    def validate(self) -> list[str]:
        problems = []
        if not np.all(np.isfinite(self.positions)):
            problems.append("non-finite positions")
        for name in ("eps_l", "eps_g"):
            arr = getattr(self, name)
            if len(arr) and (arr.min() < EPS_MIN or arr.max() > EPS_MAX):
                problems.append(f"{name} outside [{EPS_MIN}, {EPS_MAX}]")
        return problems


@dataclass
class ValidationReport:
    """Violated session invariants; empty means valid."""

    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __str__(self) -> str:
        return "; ".join(self.issues) if self.issues else "valid"


def validate_session(session: Session, config: PipelineConfig) -> ValidationReport:
    """
    Check a session against its invariants.

    Args:
        session: Session to check
        config: Pipeline configuration (for max_range)

    Returns:
        ValidationReport listing every violation
    """
    report = ValidationReport()
    n_scans, n_poses = len(session.scans), len(session.poses)
    if n_scans != n_poses:
        report.issues.append(f"length-mismatch: {n_scans} scans but {n_poses} poses")
    if n_scans == 0:
        report.issues.append("empty-session: no scans")

    stamps = session.timestamps
    if len(stamps) > 1:
        bad = np.nonzero(np.diff(stamps) <= 0)[0]
        for i in bad:
            report.issues.append(f"non-monotone-timestamp: scan {i + 1} at {stamps[i + 1]}")

    for i, scan in enumerate(session.scans):
        if len(scan) == 0:
            report.issues.append(f"empty-scan: scan {i}")
            continue
        if not np.all(np.isfinite(scan.points)):
            report.issues.append(f"non-finite-point: scan {i}")
            continue
        far = int(np.count_nonzero(scan.ranges() > config.max_range))
        if far:
            report.issues.append(f"out-of-range: scan {i} has {far} points beyond {config.max_range} m")

    for i, pose in enumerate(session.poses):
        if not pose.is_valid(1e-6):
            report.issues.append(f"invalid-pose: pose {i} is not a rigid transform")
    return report
