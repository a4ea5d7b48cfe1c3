"""Place recognition with a polar max-height descriptor."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..config import PipelineConfig
from ..errors import LoopNotFoundError, RegistrationError
from ..model import Pose, Scan, Session
from ..spatial import KdIndex
from .base import LoopCandidate, LoopDetector
from .gicp import RegistrationTarget, prepare_source, register

logger = logging.getLogger(__name__)

# Added to point heights so bins below the sensor still encode structure.
HEIGHT_OFFSET = 2.0

# Session points scored per loop candidate.
OVERLAP_SAMPLES = 5_000


def polar_descriptor(points: np.ndarray, rings: int, sectors: int, max_radius: float) -> np.ndarray:
    """
    Rings x sectors grid of the maximum (height + offset) per polar bin.

    Args:
        points: (N, 3) scan points in sensor frame
        rings: Radial bin count
        sectors: Azimuth bin count
        max_radius: Points beyond this range are ignored

    Returns:
        (rings, sectors) array, zero where a bin is empty
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    radius = np.hypot(pts[:, 0], pts[:, 1])
    keep = (radius < max_radius) & (radius > 0)
    pts, radius = pts[keep], radius[keep]
    ring = np.minimum((radius / max_radius * rings).astype(np.int64), rings - 1)
    theta = np.arctan2(pts[:, 1], pts[:, 0]) + math.pi
    sector = np.minimum((theta / (2 * math.pi) * sectors).astype(np.int64), sectors - 1)
    desc = np.zeros((rings, sectors))
    np.maximum.at(desc, (ring, sector), np.maximum(pts[:, 2] + HEIGHT_OFFSET, 0.0))
    return desc


def descriptor_distance(anchor: np.ndarray, query: np.ndarray) -> tuple[float, int]:
    """
    Column-shift matched distance between two descriptors.

    Returns:
        (1 - best mean column cosine similarity, shift in sectors). Rolling
        ``query`` by the shift aligns it with ``anchor``.
    """
    sectors = anchor.shape[1]
    a_norm = np.linalg.norm(anchor, axis=0)
    a_unit = np.divide(anchor, a_norm, out=np.zeros_like(anchor), where=a_norm > 0)

    shifts = np.arange(sectors)
    rolled = np.stack([np.roll(query, k, axis=1) for k in shifts])
    q_norm = np.linalg.norm(rolled, axis=1)
    q_unit = np.divide(rolled, q_norm[:, None, :], out=np.zeros_like(rolled), where=q_norm[:, None, :] > 0)

    sims = np.einsum("rs,krs->ks", a_unit, q_unit)
    occupied = (a_norm > 0)[None, :] | (q_norm > 0)
    counts = occupied.sum(axis=1)
    mean_sim = np.where(counts > 0, sims.sum(axis=1) / np.maximum(counts, 1), 0.0)
    best = int(np.argmax(mean_sim))
    return float(1.0 - mean_sim[best]), best


def _wrap(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


def _yaw_pose(yaw: float) -> Pose:
    return Pose.from_xyz_rpy(0.0, 0.0, 0.0, yaw=yaw)


@dataclass(frozen=True)
class PolarContextDetector(LoopDetector):
    """
    Matches every session scan against every anchor scan.

    The best few descriptor matches are refined and scored by how much of the
    session they lay onto the anchors, so a place that looks alike from the
    opposite end does not win on descriptor distance alone.
    """

    config: PipelineConfig

    @property
    def name(self) -> str:
        return "polar-context"

    def describe(self, scan: Scan) -> np.ndarray:
        c = self.config
        return polar_descriptor(scan.points - scan.sensor_origin, c.loop_rings, c.loop_sectors, c.loop_max_radius)

    def detect(self, anchors: list[tuple[Scan, Pose]], session: Session) -> LoopCandidate:
        if not anchors or len(session) == 0:
            raise LoopNotFoundError("loop detection needs anchors and a non-empty session")

        anchor_desc = [self.describe(scan) for scan, _ in anchors]
        session_desc = [self.describe(scan) for scan in session.scans]
        pairs = []
        for m, a in enumerate(anchor_desc):
            for s, q in enumerate(session_desc):
                dist, shift = descriptor_distance(a, q)
                pairs.append((dist, m, s, shift))
        pairs.sort()

        dist = pairs[0][0]
        logger.info("best loop pair anchor=%d scan=%d distance=%.4f", pairs[0][1], pairs[0][2], dist)
        if dist > self.config.loop_threshold:
            raise LoopNotFoundError(
                f"no loop found: best descriptor distance {dist:.3f} exceeds {self.config.loop_threshold}"
            )

        shortlist = [p for p in pairs[: self.config.loop_candidates] if p[0] <= self.config.loop_threshold]
        candidates = [self._candidate(anchors, session, *p) for p in shortlist]
        if len(candidates) == 1:
            return candidates[0]
        return self._verify(anchors, session, candidates)

    def _candidate(
        self, anchors: list[tuple[Scan, Pose]], session: Session, dist: float, m: int, s: int, shift: int
    ) -> LoopCandidate:
        yaw = _wrap(shift * 2 * math.pi / self.config.loop_sectors)
        anchor_scan, anchor_pose = anchors[m]
        offset = _yaw_pose(yaw)
        if self.config.loop_refine:
            offset = self._refine(anchor_scan, session.scans[s], offset)
        t_init = anchor_pose @ offset @ session.poses[s].inverse()
        return LoopCandidate(m, s, t_init, dist, yaw=yaw)

    def _verify(
        self, anchors: list[tuple[Scan, Pose]], session: Session, candidates: list[LoopCandidate]
    ) -> LoopCandidate:
        """Keep the candidate whose T_init lays the most session points onto the anchors."""
        index = KdIndex(np.vstack([pose.apply(scan.points) for scan, pose in anchors]))
        points = np.vstack([pose.apply(scan.points) for scan, pose in zip(session.scans, session.poses)])
        points = points[:: max(1, len(points) // OVERLAP_SAMPLES)]

        best, best_key = candidates[0], (-1.0, 0.0)
        for candidate in candidates:
            ids, _ = index.nearest(
                candidate.initial_transform.apply(points), max_distance=self.config.max_correspondence_distance
            )
            overlap = float(np.mean(ids >= 0))
            logger.debug(
                "loop candidate anchor=%d scan=%d yaw=%.1f deg overlap=%.3f",
                candidate.map_scan_index,
                candidate.session_scan_index,
                math.degrees(candidate.yaw),
                overlap,
            )
            key = (overlap, -candidate.descriptor_distance)
            if key > best_key:
                best, best_key = candidate, key
        logger.info(
            "loop verified anchor=%d scan=%d overlap=%.3f", best.map_scan_index, best.session_scan_index, best_key[0]
        )
        return best

    def _refine(self, anchor: Scan, scan: Scan, offset: Pose) -> Pose:
        """Scan-to-scan registration of the yaw-only offset; falls back to it on failure."""
        try:
            target = RegistrationTarget.from_points(anchor.points, self.config)
            result = register(prepare_source(scan.points, self.config), target, offset, self.config)
        except RegistrationError as e:
            logger.warning("loop seed refinement failed, using yaw-only offset: %s", e)
            return offset
        return result.transform
