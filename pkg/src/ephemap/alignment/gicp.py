"""Ephemerality-weighted generalized ICP (scan-to-map, Gauss-Newton on SE(3))."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..config import PipelineConfig
from ..errors import RegistrationError
from ..model import AttributedPointCloud, Pose
from ..spatial import KdIndex, cell_keys, pack_keys
from .base import RegistrationResult

logger = logging.getLogger(__name__)

MIN_SCAN_POINTS = 50
MAX_CONDITION = 1e12
PLANE_EIGENVALUES = np.array([1e-3, 1.0, 1.0])
_CHUNK = 50_000


def _skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices of an (N, 3) array."""
    out = np.zeros((len(v), 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def plane_covariances(points: np.ndarray, index: KdIndex, k: int) -> np.ndarray:
    """
    Per-point covariances from the k-NN neighbourhood, regularised to planes.

    The eigenvectors of the sample covariance are kept; eigenvalues become
    (1e-3, 1, 1) with the smallest along the surface normal.
    """
    n = len(points)
    k = min(k, len(index))
    covs = np.empty((n, 3, 3))
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        ids, _ = index.knn_batch(points[lo:hi], k)
        nbrs = index.points[ids]
        centered = nbrs - nbrs.mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", centered, centered) / max(k, 1)
        _, vecs = np.linalg.eigh(cov)
        covs[lo:hi] = np.einsum("nij,j,nkj->nik", vecs, PLANE_EIGENVALUES, vecs)
    return covs


@dataclass(frozen=True, eq=False)
class RegistrationTarget:
    """Map side of a registration: indexed points, covariances and weights."""

    points: np.ndarray
    index: KdIndex
    covariances: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_cloud(
        cls, cloud: AttributedPointCloud, config: PipelineConfig, weighted: Optional[bool] = None
    ) -> "RegistrationTarget":
        """
        Prepare a map for registration.

        Args:
            cloud: Map with eps_g
            config: Pipeline configuration
            weighted: Use 1 - eps_g weights (defaults to config.weighted_registration)
        """
        if len(cloud) == 0:
            raise RegistrationError("Cannot register against an empty map")
        index = KdIndex(cloud.positions)
        covs = plane_covariances(cloud.positions, index, config.gicp_neighbors)
        use_weights = config.weighted_registration if weighted is None else weighted
        weights = 1.0 - cloud.eps_g if use_weights else np.ones(len(cloud))
        return cls(cloud.positions, index, covs, np.asarray(weights, dtype=np.float64))

    @classmethod
    def from_points(cls, points: np.ndarray, config: PipelineConfig) -> "RegistrationTarget":
        """Unweighted target over a plain point set."""
        return cls.from_cloud(AttributedPointCloud.from_points(points, 0.0, 0.0), config, weighted=False)


@dataclass(frozen=True, eq=False)
class RegistrationSource:
    """Decimated scan with its covariances."""

    points: np.ndarray
    covariances: np.ndarray


def prepare_source(points: np.ndarray, config: PipelineConfig) -> RegistrationSource:
    """
    Range-filter and voxel-decimate a scan, then estimate covariances.

    Raises:
        RegistrationError: If fewer than 50 points remain
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pts = pts[np.linalg.norm(pts, axis=1) <= config.max_range]
    if len(pts):
        keys = pack_keys(cell_keys(pts, config.scan_voxel))
        _, first = np.unique(keys, return_index=True)
        pts = pts[np.sort(first)]
    if len(pts) < MIN_SCAN_POINTS:
        raise RegistrationError(f"scan has {len(pts)} points after filtering, need {MIN_SCAN_POINTS}")
    index = KdIndex(pts)
    return RegistrationSource(pts, plane_covariances(pts, index, config.gicp_neighbors))


def register(
    source: RegistrationSource,
    target: RegistrationTarget,
    init: Pose,
    config: PipelineConfig,
) -> RegistrationResult:
    """
    Minimise the weighted distribution-to-distribution cost from ``init``.

    Returns:
        RegistrationResult; converged is False after gicp_max_iterations

    Raises:
        RegistrationError: On degenerate normal equations or no correspondences
    """
    transform = init
    src = source.points
    cost = np.inf
    inlier_fraction = 0.0
    condition = 0.0
    prev_ids: Optional[np.ndarray] = None
    prev_cost = np.inf

    for iteration in range(1, config.gicp_max_iterations + 1):
        q = transform.apply(src)
        ids, _ = target.index.nearest(q, max_distance=config.max_correspondence_distance)
        valid = ids >= 0
        n_valid = int(valid.sum())
        inlier_fraction = n_valid / len(src)
        if n_valid < 6:
            raise RegistrationError(f"only {n_valid} correspondences within gate")

        matched = ids[valid]
        qv = q[valid]
        rot = transform.rotation
        combined = target.covariances[matched] + rot @ source.covariances[valid] @ rot.T
        omega = np.linalg.inv(combined)
        d = target.points[matched] - qv
        w = target.weights[matched]

        jac = np.concatenate([_skew(qv), np.broadcast_to(-np.eye(3), (n_valid, 3, 3))], axis=2)
        jt_omega = np.einsum("nji,njk->nik", jac, omega)
        hessian = np.einsum("n,nik,nkl->il", w, jt_omega, jac)
        gradient = np.einsum("n,nik,nk->i", w, jt_omega, d)
        cost = float(np.einsum("n,ni,nij,nj->", w, d, omega, d))

        condition = float(np.linalg.cond(hessian))
        if not np.isfinite(condition) or condition > MAX_CONDITION:
            raise RegistrationError(
                f"degenerate geometry: condition number {condition:.3g}", condition=condition
            )

        delta = -np.linalg.solve(hessian, gradient)
        transform = Pose.exp(delta) @ transform

        if np.linalg.norm(delta) < config.gicp_tolerance:
            return RegistrationResult(transform, True, iteration, cost, inlier_fraction, condition)
        stalled = (
            prev_ids is not None
            and len(prev_ids) == len(ids)
            and np.array_equal(prev_ids, ids)
            and abs(prev_cost - cost) <= 1e-10 * max(abs(cost), 1.0)
        )
        if stalled:
            return RegistrationResult(transform, True, iteration, cost, inlier_fraction, condition)
        prev_ids, prev_cost = ids, cost

    logger.debug("registration not converged after %d iterations", config.gicp_max_iterations)
    return RegistrationResult(
        transform, False, config.gicp_max_iterations, cost, inlier_fraction, condition
    )


def weighted_gicp(
    scan: np.ndarray,
    cloud: AttributedPointCloud,
    init: Pose,
    config: PipelineConfig,
    weighted: Optional[bool] = None,
) -> RegistrationResult:
    """
    Register a scan against a map, weighting map points by 1 - eps_g.

    Args:
        scan: (N, 3) scan points in sensor frame
        cloud: Map with eps_g
        init: Initial sensor-to-map pose
        config: Pipeline configuration
        weighted: Override config.weighted_registration

    Returns:
        RegistrationResult with the refined sensor-to-map pose
    """
    target = RegistrationTarget.from_cloud(cloud, config, weighted=weighted)
    return register(prepare_source(scan, config), target, init, config)
