"""Brute-force reference implementations used to check the indexed code paths."""

import math

import numpy as np

from ..config import PipelineConfig
from ..errors import OracleLimitError
from ..evaluation import AlignmentMetrics, CleaningMetrics, f1_score
from ..model import AttributedPointCloud
from ..removal import RaySampleSet, bayes_update_local, propagation_kernel
from ..spatial import squared_distances

MAX_ORACLE_POINTS = 5_000
MAX_ORACLE_SAMPLES = 50_000


def linear_knn(points: np.ndarray, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k nearest points by exhaustive scan, ties broken by id."""
    sq = squared_distances(points, query)
    order = np.lexsort((np.arange(len(points)), sq))[:k]
    return order, sq[order]


def oracle_ephemerality(
    cloud: AttributedPointCloud, rays: RaySampleSet, config: PipelineConfig
) -> np.ndarray:
    """
    Local ephemerality by sequential propagation with linear-scan search.

    Samples are visited in the same order as the indexed implementation and
    fused one neighbour at a time.

    Raises:
        OracleLimitError: Above MAX_ORACLE_POINTS points or MAX_ORACLE_SAMPLES samples
    """
    if len(cloud) > MAX_ORACLE_POINTS or len(rays) > MAX_ORACLE_SAMPLES:
        raise OracleLimitError(
            f"oracle limited to {MAX_ORACLE_POINTS} points and {MAX_ORACLE_SAMPLES} samples, "
            f"got {len(cloud)} and {len(rays)}"
        )
    eps = np.array(cloud.eps_l, dtype=np.float64)
    if len(cloud) == 0:
        return eps
    samples, is_free = rays.ordered()
    skip_neutral = config.alpha == 0.5
    for _ in range(config.passes):
        for sample, free in zip(samples, is_free):
            ids, sq = linear_knn(cloud.positions, sample, config.knn)
            kinds = np.full(len(ids), free, dtype=bool)
            evidence = propagation_kernel(np.sqrt(sq), kinds, config)
            for pid, f in zip(ids, evidence):
                if skip_neutral and f == 0.5:
                    continue
                eps[pid] = bayes_update_local(eps[pid], f)
    return eps


def _all_pairs_nearest(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    sq = squared_distances(reference[None, :, :], query[:, None, :])
    return np.sqrt(sq.min(axis=1))


def brute_alignment_metrics(cloud_a: np.ndarray, cloud_b: np.ndarray, sigma_inlier: float = 0.5) -> AlignmentMetrics:
    """All-pairs AC / RMSE / CD."""
    a = np.asarray(cloud_a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(cloud_b, dtype=np.float64).reshape(-1, 3)
    d_ab = _all_pairs_nearest(a, b)
    d_ba = _all_pairs_nearest(b, a)
    inl_ab = d_ab[d_ab <= sigma_inlier]
    inl_ba = d_ba[d_ba <= sigma_inlier]
    if len(inl_ab) == 0:
        return AlignmentMetrics(0.0, None, None, 0)
    rmse = math.sqrt(float(np.mean(inl_ab * inl_ab)))
    cd = float(np.mean(inl_ab)) + float(np.mean(inl_ba)) if len(inl_ba) else None
    return AlignmentMetrics(len(inl_ab) / len(a), rmse, cd, len(inl_ab))


def brute_cleaning_metrics(
    cleaned: np.ndarray, gt_static: np.ndarray, gt_dynamic: np.ndarray, match_radius: float = 0.05
) -> CleaningMetrics:
    """All-pairs PR / RR / F1."""
    cleaned = np.asarray(cleaned, dtype=np.float64).reshape(-1, 3)

    def _matched(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(cleaned) == 0:
            return np.zeros(len(points), dtype=bool)
        return _all_pairs_nearest(points, cleaned) <= match_radius

    pr = float(np.mean(_matched(gt_static))) if len(gt_static) else None
    rr = float(np.mean(~_matched(gt_dynamic))) if len(gt_dynamic) else None
    return CleaningMetrics(pr, rr, f1_score(pr, rr))
