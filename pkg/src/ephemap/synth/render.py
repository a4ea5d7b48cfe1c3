"""Ray-cast rendering of scene sessions with ground-truth labels."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import SceneError
from ..model import Pose, Scan, Session
from .scene import Primitive, PrimitiveClass, SceneSpec

logger = logging.getLogger(__name__)

NO_HIT = -1


@dataclass(frozen=True, eq=False)
class LabeledSession:
    """A rendered session with per-point labels and drift-free poses.

    ``session.poses`` are the reported (possibly drifted) poses in the
    session's local frame, anchored at the first ground-truth pose.
    ``gt_poses`` are world-frame sensor poses.
    """

    session: Session
    labels: tuple[np.ndarray, ...]
    sources: tuple[np.ndarray, ...]
    source_names: tuple[str, ...]
    gt_poses: tuple[Pose, ...]

    def __len__(self) -> int:
        return len(self.session)

    @property
    def local_gt_poses(self) -> list[Pose]:
        """Ground-truth poses expressed in the session's local frame."""
        origin = self.gt_poses[0].inverse()
        return [origin @ p for p in self.gt_poses]

    def all_labels(self) -> np.ndarray:
        """Labels of every point, scan by scan."""
        return np.concatenate(self.labels) if self.labels else np.zeros(0, dtype=np.uint8)

    def all_sources(self) -> np.ndarray:
        return np.concatenate(self.sources) if self.sources else np.zeros(0, dtype=np.int32)

    def world_points(self) -> np.ndarray:
        """Every endpoint in the world frame, scan by scan."""
        parts = [p.apply(s.points) for s, p in zip(self.session.scans, self.gt_poses)]
        return np.concatenate(parts) if parts else np.zeros((0, 3))

    def points_from(self, *names: str) -> np.ndarray:
        """World-frame endpoints that hit the named primitives."""
        wanted = [i for i, n in enumerate(self.source_names) if n in names]
        return self.world_points()[np.isin(self.all_sources(), wanted)]

    def label_counts(self) -> dict[PrimitiveClass, int]:
        labels = self.all_labels()
        return {cls: int(np.sum(labels == cls.code)) for cls in PrimitiveClass}


def ray_box_distances(origin: np.ndarray, directions: np.ndarray, box: Primitive) -> np.ndarray:
    """
    Entry distance of each ray into an oriented box (inf on a miss).

    Rays starting inside the box miss it. Zero extents (planes) are handled
    by the same slab test.
    """
    o = box.to_local(origin)[0]
    d = box.rotate_to_local(directions)
    h = box.half_extents()
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - o) / d
        t2 = (h - o) / d
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    parallel = d == 0.0
    inside = np.abs(o) <= h
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
    t_near = lo.max(axis=1)
    t_far = hi.min(axis=1)
    hit = (t_near <= t_far) & (t_near > 1e-9)
    return np.where(hit, t_near, np.inf)


def cast_rays(
    origin: np.ndarray,
    directions: np.ndarray,
    boxes: list[Primitive],
    max_range: float,
) -> tuple[np.ndarray, np.ndarray]:
    """
    First hit of each ray against a set of boxes.

    Returns:
        (distance, box index) per ray; misses carry inf / NO_HIT
    """
    if not boxes:
        return np.full(len(directions), np.inf), np.full(len(directions), NO_HIT, dtype=np.int32)
    dists = np.stack([ray_box_distances(origin, directions, b) for b in boxes])
    first = np.argmin(dists, axis=0).astype(np.int32)
    best = dists[first, np.arange(len(directions))]
    missed = best > max_range
    return np.where(missed, np.inf, best), np.where(missed, NO_HIT, first)


def _check_bounds(spec: SceneSpec, poses: list[Pose], session: int) -> None:
    if spec.bounds is None:
        return
    lo, hi = (np.asarray(b, dtype=np.float64) for b in spec.bounds)
    for i, pose in enumerate(poses):
        if np.any(pose.translation < lo) or np.any(pose.translation > hi):
            raise SceneError(
                f"session {session} scan {i}: sensor at {pose.translation.round(3).tolist()} leaves the scene bounds"
            )


def session_gt_poses(spec: SceneSpec, session: int) -> list[Pose]:
    """World-frame sensor poses of a session (1-based index)."""
    traj = spec.trajectory
    rng = np.random.default_rng([spec.seed, session])
    offset = np.array(
        [
            rng.uniform(-traj.jitter, traj.jitter),
            rng.uniform(-traj.jitter, traj.jitter),
            rng.uniform(-traj.yaw_jitter, traj.yaw_jitter),
        ]
    )
    return traj.poses(offset)


def render_scan(
    spec: SceneSpec,
    session: int,
    index: int,
    pose: Pose,
    boxes: list[Primitive],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Render one scan.

    Returns:
        (points in sensor frame, class codes, source indices into
        ``boxes`` followed by the session's actors)
    """
    sensor = spec.sensor
    time = index * spec.trajectory.period
    actors = [a.at(time) for a in spec.actors if a.is_active(session, index)]
    shapes = boxes + actors
    dirs_sensor = sensor.directions()
    dirs_world = dirs_sensor @ pose.rotation.T
    dist, hit = cast_rays(pose.translation, dirs_world, shapes, sensor.max_range)

    rng = np.random.default_rng([spec.seed, session, index])
    noise = rng.normal(0.0, sensor.noise, size=len(dist)) if sensor.noise > 0 else np.zeros(len(dist))
    keep = hit != NO_HIT
    ranges = dist[keep] + noise[keep]
    points = dirs_sensor[keep] * ranges[:, None]
    codes = np.array([s.cls.code for s in shapes], dtype=np.uint8)
    return points, codes[hit[keep]], hit[keep]


def render_session(spec: SceneSpec, session: int, threads: int = 1) -> LabeledSession:
    """
    Render session ``session`` (1-based) of a scene.

    Reported poses are the ground truth relative to the first scan with the
    scene's drift model applied. Each scan draws noise from its own stream
    seeded by (seed, session, scan), so output is independent of ``threads``.

    Raises:
        SceneError: If the session index is out of range or the trajectory
            leaves the scene bounds
    """
    if not 1 <= session <= spec.sessions:
        raise SceneError(f"session {session} outside 1..{spec.sessions}")
    gt = session_gt_poses(spec, session)
    _check_bounds(spec, gt, session)
    boxes = spec.primitives_for(session)
    names = tuple(b.name for b in boxes) + tuple(a.name for a in spec.actors)
    actor_slot = {a.name: len(boxes) + j for j, a in enumerate(spec.actors)}

    def _one(i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        points, codes, hit = render_scan(spec, session, i, gt[i], boxes)
        # Re-index actor hits against the full actor list.
        active = [a.name for a in spec.actors if a.is_active(session, i)]
        remap = np.array([*range(len(boxes)), *(actor_slot[n] for n in active)], dtype=np.int32)
        return points, codes, remap[hit] if len(hit) else hit

    indices = range(len(gt))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_one, indices))
    else:
        parts = [_one(i) for i in indices]

    origin = gt[0].inverse()
    reported = [spec.drift.at(i) @ (origin @ p) for i, p in enumerate(gt)]
    period = spec.trajectory.period
    scans = tuple(Scan(points, timestamp=i * period) for i, (points, _, _) in enumerate(parts))
    sess = Session(scans, tuple(reported), frame_id="local", session_id=f"{spec.name}-{session:02d}", sensor_id="synthetic")
    logger.debug("rendered %s: %d points", sess.session_id, sum(len(s) for s in scans))
    return LabeledSession(
        session=sess,
        labels=tuple(codes for _, codes, _ in parts),
        sources=tuple(src for _, _, src in parts),
        source_names=names,
        gt_poses=tuple(gt),
    )
