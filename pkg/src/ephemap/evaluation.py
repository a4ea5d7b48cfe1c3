"""Alignment (AC / RMSE / CD) and cleaning (PR / RR / F1) metrics."""

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .spatial import KdIndex

UNDEFINED = "undefined"


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return UNDEFINED
    return f"{value:.6g}"


@dataclass(frozen=True)
class AlignmentMetrics:
    """Inlier ratio, inlier RMSE and bidirectional inlier Chamfer distance.

    ``rmse`` and ``cd`` are None when no inlier pair exists.
    """

    ac: float
    rmse: Optional[float]
    cd: Optional[float]
    inliers: int = 0

    def as_dict(self) -> dict[str, Optional[float]]:
        return asdict(self)

    def as_record(self) -> str:
        return f"ac={_fmt(self.ac)} rmse={_fmt(self.rmse)} cd={_fmt(self.cd)} inliers={self.inliers}"


@dataclass(frozen=True)
class CleaningMetrics:
    """Preservation rate, removal rate and their harmonic mean (None when undefined)."""

    pr: Optional[float]
    rr: Optional[float]
    f1: Optional[float]

    def as_dict(self) -> dict[str, Optional[float]]:
        return asdict(self)

    def as_record(self) -> str:
        return f"pr={_fmt(self.pr)} rr={_fmt(self.rr)} f1={_fmt(self.f1)}"


def f1_score(pr: Optional[float], rr: Optional[float]) -> Optional[float]:
    if pr is None or rr is None:
        return None
    if pr + rr <= 0:
        return 0.0
    return 2.0 * pr * rr / (pr + rr)


def nearest_distances(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Distance from each query point to its nearest reference point."""
    _, dist = KdIndex(reference).nearest(query)
    return dist


def _mean_inlier(dist: np.ndarray, sigma: float) -> Optional[float]:
    inl = dist[dist <= sigma]
    return float(np.mean(inl)) if len(inl) else None


def alignment_metrics(cloud_a: np.ndarray, cloud_b: np.ndarray, sigma_inlier: float = 0.5) -> AlignmentMetrics:
    """
    Compare two point sets under an inlier gate.

    Each direction uses its own inlier set for the Chamfer term.

    Raises:
        ValueError: If either set is empty
    """
    a = np.asarray(cloud_a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(cloud_b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("Input point arrays must be non-empty.")

    d_ab = nearest_distances(a, b)
    d_ba = nearest_distances(b, a)
    inliers = d_ab[d_ab <= sigma_inlier]
    ac = len(inliers) / len(a)
    if len(inliers) == 0:
        return AlignmentMetrics(0.0, None, None, 0)

    rmse = math.sqrt(float(np.mean(inliers * inliers)))
    back = _mean_inlier(d_ba, sigma_inlier)
    cd = None if back is None else float(np.mean(inliers)) + back
    return AlignmentMetrics(ac, rmse, cd, len(inliers))


def cleaning_metrics(
    cleaned: np.ndarray,
    gt_static: np.ndarray,
    gt_dynamic: np.ndarray,
    match_radius: float = 0.05,
) -> CleaningMetrics:
    """
    Point-level preservation and removal rates of a cleaned map.

    A ground-truth point is matched when a cleaned point lies within
    ``match_radius``. Empty ground-truth sets give an undefined metric.
    """
    cleaned = np.asarray(cleaned, dtype=np.float64).reshape(-1, 3)
    gt_static = np.asarray(gt_static, dtype=np.float64).reshape(-1, 3)
    gt_dynamic = np.asarray(gt_dynamic, dtype=np.float64).reshape(-1, 3)

    def _matched(points: np.ndarray) -> np.ndarray:
        if len(cleaned) == 0:
            return np.zeros(len(points), dtype=bool)
        return nearest_distances(points, cleaned) <= match_radius

    pr = float(np.mean(_matched(gt_static))) if len(gt_static) else None
    rr = float(np.mean(~_matched(gt_dynamic))) if len(gt_dynamic) else None
    return CleaningMetrics(pr, rr, f1_score(pr, rr))
