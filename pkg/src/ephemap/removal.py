"""Local ephemerality estimation and dynamic point removal for one session."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .config import PipelineConfig
from .model import EPS_INIT, EPS_MAX, EPS_MIN, AttributedPointCloud, Pose, Scan, Session, bayes_fuse, clamp_eph
from .spatial import CoverageGrid, KdIndex, build_coverage, cell_keys, pack_keys, voxel_downsample

logger = logging.getLogger(__name__)


class SampleKind(str, Enum):
    """Evidence source of a ray sample."""

    OCCUPIED = "occupied"
    FREE = "free"


@dataclass(frozen=True, eq=False)
class RaySampleSet:
    """Ray endpoints and free-space samples of one or more scans, in map frame."""

    occupied: np.ndarray
    free: np.ndarray
    occupied_scan: np.ndarray
    free_scan: np.ndarray

    @classmethod
    def empty(cls) -> "RaySampleSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros(0, np.int64))

    @staticmethod
    def concat(sets: list["RaySampleSet"]) -> "RaySampleSet":
        if not sets:
            return RaySampleSet.empty()
        return RaySampleSet(
            np.concatenate([s.occupied for s in sets]),
            np.concatenate([s.free for s in sets]),
            np.concatenate([s.occupied_scan for s in sets]),
            np.concatenate([s.free_scan for s in sets]),
        )

    def __len__(self) -> int:
        return len(self.occupied) + len(self.free)

    def ordered(self) -> tuple[np.ndarray, np.ndarray]:
        """
        All samples in processing order: by scan, occupied before free.

        Returns:
            (points (M, 3), is_free (M,) bool)
        """
        points = np.concatenate([self.occupied, self.free])
        is_free = np.concatenate([np.zeros(len(self.occupied), bool), np.ones(len(self.free), bool)])
        scans = np.concatenate([self.occupied_scan, self.free_scan])
        order = np.lexsort((is_free, scans))
        return points[order], is_free[order]

    def all_points(self) -> np.ndarray:
        return np.concatenate([self.occupied, self.free])


def sample_rays(
    scan: Scan,
    pose: Pose,
    step: float,
    margin: float = 0.5,
    scan_index: int = 0,
) -> RaySampleSet:
    """
    Turn a scan into occupied endpoints and free-space samples.

    Free samples sit at step, 2*step, ... from the sensor origin along each
    ray and stop ``margin`` short of the endpoint.

    Args:
        scan: Scan in sensor frame
        pose: Sensor-to-map transform
        step: Sample spacing along the ray (m), > 0
        margin: Minimum distance between a free sample and the endpoint (m)
        scan_index: Index recorded for every sample

    Returns:
        RaySampleSet in map frame
    """
    if step <= 0:
        raise ValueError("free-space step must be > 0")
    rays = scan.points - scan.sensor_origin
    lengths = np.linalg.norm(rays, axis=1)
    counts = np.floor((lengths - margin) / step + 1e-9).astype(np.int64)
    counts = np.maximum(counts, 0)
    total = int(counts.sum())

    ray_of = np.repeat(np.arange(len(rays)), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    k = (np.arange(total) - starts + 1).astype(np.float64)
    safe_len = np.where(lengths > 0, lengths, 1.0)
    dirs = rays / safe_len[:, None]
    free_sensor = scan.sensor_origin + dirs[ray_of] * (k * step)[:, None]

    return RaySampleSet(
        occupied=pose.apply(scan.points),
        free=pose.apply(free_sensor) if total else np.zeros((0, 3)),
        occupied_scan=np.full(len(rays), scan_index, dtype=np.int64),
        free_scan=np.full(total, scan_index, dtype=np.int64),
    )


def sample_session_rays(
    session: Session,
    config: PipelineConfig,
    threads: int = 1,
) -> RaySampleSet:
    """Ray samples of every scan of a session (poses taken from the session)."""

    def _one(i: int) -> RaySampleSet:
        return sample_rays(
            session.scans[i],
            session.poses[i],
            config.free_sample_step,
            config.endpoint_margin,
            scan_index=i,
        )

    indices = range(len(session.scans))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_one, indices))
    else:
        parts = [_one(i) for i in indices]
    return RaySampleSet.concat(parts)


def propagation_kernel(
    x: Union[float, np.ndarray],
    kind: Union[SampleKind, str, np.ndarray],
    config: PipelineConfig,
) -> Union[float, np.ndarray]:
    """
    Evidence probability of a sample at distance ``x`` from a map point.

    Occupied samples give values in [beta, alpha], free samples in
    [alpha, 2*alpha - beta]; both reach alpha at large distance.

    Args:
        x: Distance(s) in meters, >= 0
        kind: SampleKind, or a boolean array that is True for free samples
        config: Pipeline configuration (alpha, beta, sigma_o, sigma_f)
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("distance must be >= 0")
    alpha, beta = config.alpha, config.beta
    if isinstance(kind, np.ndarray):
        is_free = kind.astype(bool)
        occ = np.minimum(alpha * (1.0 - np.exp(-(x * x) / config.sigma_o**2)) + beta, alpha)
        free = np.maximum(alpha * (1.0 + np.exp(-(x * x) / config.sigma_f**2)) - beta, alpha)
        out = np.where(is_free, free, occ)
    elif SampleKind(kind) is SampleKind.OCCUPIED:
        out = np.minimum(alpha * (1.0 - np.exp(-(x * x) / config.sigma_o**2)) + beta, alpha)
    else:
        out = np.maximum(alpha * (1.0 + np.exp(-(x * x) / config.sigma_f**2)) - beta, alpha)
    if out.ndim == 0:
        return float(out)
    return out


def bayes_update_local(prev: Union[float, np.ndarray], evidence: Union[float, np.ndarray]):
    """Fuse local ephemerality with one evidence value, then clamp."""
    return clamp_eph(bayes_fuse(prev, evidence))


def neutral_cutoff(config: PipelineConfig) -> float:
    """
    Distance beyond which both kernels return exactly alpha, or inf.

    Only meaningful when alpha == 0.5, where fusing alpha is the identity.
    """
    if config.alpha != 0.5 or config.beta <= 0.0:
        return math.inf
    sigma = max(config.sigma_o, config.sigma_f)
    return sigma * math.sqrt(math.log(config.alpha / config.beta)) * 1.001 + 1e-9


def neighbor_evidence(
    ids: np.ndarray,
    sq_dists: np.ndarray,
    is_free: np.ndarray,
    config: PipelineConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Flatten per-sample neighbour lists into (point id, evidence) updates.

    Args:
        ids: (M, k) neighbour ids per sample in (distance, id) order, -1 padded
        sq_dists: (M, k) squared distances
        is_free: (M,) True for free samples
        config: Pipeline configuration

    Returns:
        (point_ids, evidence) in application order. Updates that equal the
        neutral value 0.5 are dropped since they leave the belief unchanged.
    """
    kinds = np.broadcast_to(is_free[:, None], ids.shape)
    valid = ids >= 0
    point_ids = ids[valid]
    x = np.sqrt(sq_dists[valid])
    evidence = propagation_kernel(x, kinds[valid], config)
    evidence = np.atleast_1d(np.asarray(evidence, dtype=np.float64))
    if config.alpha == 0.5:
        keep = evidence != 0.5
        point_ids, evidence = point_ids[keep], evidence[keep]
    return point_ids.astype(np.int64), evidence


def fold_updates(eps: np.ndarray, point_ids: np.ndarray, evidence: np.ndarray) -> None:
    """
    Apply updates to ``eps`` in place, exactly as a sequential loop would.

    Each point's updates keep their relative order; all points' i-th updates
    are fused together in one vector step.
    """
    if len(point_ids) == 0:
        return
    order = np.argsort(point_ids, kind="stable")
    pid = point_ids[order]
    f = evidence[order]
    starts = np.flatnonzero(np.r_[True, pid[1:] != pid[:-1]])
    sizes = np.diff(np.r_[starts, len(pid)])
    rank = np.arange(len(pid)) - np.repeat(starts, sizes)

    by_rank = np.argsort(rank, kind="stable")
    pid, f, rank = pid[by_rank], f[by_rank], rank[by_rank]
    bounds = np.searchsorted(rank, np.arange(int(rank[-1]) + 2))
    for r in range(int(rank[-1]) + 1):
        lo, hi = bounds[r], bounds[r + 1]
        ids = pid[lo:hi]
        fused = bayes_fuse(eps[ids], f[lo:hi])
        eps[ids] = np.minimum(np.maximum(fused, EPS_MIN), EPS_MAX)


def _fold_by_block(
    eps: np.ndarray,
    point_ids: np.ndarray,
    evidence: np.ndarray,
    blocks: np.ndarray,
    threads: int,
) -> None:
    """Partition updates by the spatial block of their point; one worker per block."""
    block_of_update = blocks[point_ids]
    order = np.argsort(block_of_update, kind="stable")
    sorted_blocks = block_of_update[order]
    cuts = np.flatnonzero(np.r_[True, sorted_blocks[1:] != sorted_blocks[:-1]])
    edges = np.r_[cuts, len(order)]
    chunks = [order[edges[i] : edges[i + 1]] for i in range(len(cuts))]

    def _run(chunk: np.ndarray) -> None:
        fold_updates(eps, point_ids[chunk], evidence[chunk])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(_run, chunks))


def propagate_ephemerality(
    cloud: AttributedPointCloud,
    rays: RaySampleSet,
    config: PipelineConfig,
    threads: int = 1,
    index: Optional[KdIndex] = None,
) -> AttributedPointCloud:
    """
    Update eps_l of every map point from the session's ray samples.

    Samples are processed by scan, occupied before free; every sample fuses
    the kernel value into each of its knn map neighbours.

    Args:
        cloud: Aggregated session map
        rays: Ray samples of the session
        config: Pipeline configuration
        threads: Workers for the per-block accumulation
        index: Prebuilt index over ``cloud`` (built when omitted)

    Returns:
        The cloud with updated eps_l
    """
    if len(cloud) == 0 or len(rays) == 0:
        return cloud
    index = index or KdIndex(cloud.positions)
    samples, is_free = rays.ordered()
    ids, sq = index.knn_batch(samples, config.knn, upper_bound=neutral_cutoff(config))
    point_ids, evidence = neighbor_evidence(ids, sq, is_free, config)
    logger.debug("propagating %d updates from %d samples", len(point_ids), len(samples))

    eps = np.array(cloud.eps_l, dtype=np.float64)
    blocks = None
    if threads > 1:
        blocks = pack_keys(cell_keys(cloud.positions, config.block_size))
    for _ in range(config.passes):
        if blocks is not None:
            _fold_by_block(eps, point_ids, evidence, blocks, threads)
        else:
            fold_updates(eps, point_ids, evidence)
    return cloud.replace(eps_l=eps)


def aggregate_session(
    session: Session,
    config: PipelineConfig,
    compact: Optional[bool] = None,
) -> AttributedPointCloud:
    """
    Union of all scans transformed by their poses, eps_l = eps_g = 0.5.

    Args:
        session: Session whose poses are already in the target frame
        config: Pipeline configuration
        compact: Voxel-compact at voxel_size (defaults to config.compact_session)
    """
    parts = [pose.apply(scan.points) for scan, pose in zip(session.scans, session.poses)]
    points = np.concatenate(parts) if parts else np.zeros((0, 3))
    cloud = AttributedPointCloud.from_points(points, EPS_INIT, EPS_INIT, frame_id=session.frame_id)
    if config.compact_session if compact is None else compact:
        cloud = voxel_downsample(cloud, config.voxel_size)
    return cloud


def extract_static(
    cloud: AttributedPointCloud, tau_l: float
) -> tuple[AttributedPointCloud, AttributedPointCloud]:
    """Split into (cleaned: eps_l < tau_l, removed: the rest)."""
    if not 0.0 < tau_l < 1.0:
        raise ValueError("tau_l must lie in (0, 1)")
    keep = cloud.eps_l < tau_l
    return cloud.subset(keep), cloud.subset(~keep)


@dataclass(frozen=True, eq=False)
class RemovalResult:
    """Output of dynamic removal on one aligned session."""

    session_map: AttributedPointCloud
    cleaned: AttributedPointCloud
    removed: AttributedPointCloud
    coverage: CoverageGrid


def remove_dynamic(session: Session, config: PipelineConfig, threads: int = 1) -> RemovalResult:
    """
    Aggregate, propagate and threshold one session whose poses are in map frame.

    Returns:
        RemovalResult with the cleaned map and the session's coverage grid
    """
    session_map = aggregate_session(session, config)
    rays = sample_session_rays(session, config, threads)
    session_map = propagate_ephemerality(session_map, rays, config, threads)
    cleaned, removed = extract_static(session_map, config.tau_l)
    coverage = build_coverage(rays.all_points(), config.coverage_cell)
    logger.info(
        "session %s: %d points, %d static, %d removed, %d coverage cells",
        session.session_id,
        len(session_map),
        len(cleaned),
        len(removed),
        len(coverage),
    )
    return RemovalResult(session_map, cleaned, removed, coverage)
