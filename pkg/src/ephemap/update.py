"""Lifelong map update: change classification, global ephemerality and delta maps."""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from .config import PipelineConfig
from .errors import MapUpdateError
from .model import EPS_INIT, AttributedPointCloud, bayes_fuse, clamp_eph
from .spatial import CoverageGrid, KdIndex, cell_keys, pack_keys, unpack_keys, voxel_downsample

logger = logging.getLogger(__name__)

Number = Union[float, np.ndarray]


class PointCategory(str, Enum):
    """Change category of a point during a map update."""

    COEXISTING = "coexisting"
    DELETED = "deleted"
    EMERGED = "emerged"
    PREV_EXPLORED = "prev_explored"
    NEWLY_EXPLORED = "newly_explored"

    @property
    def code(self) -> int:
        return CATEGORY_ORDER.index(self)

    @classmethod
    def from_code(cls, code: int) -> "PointCategory":
        return CATEGORY_ORDER[int(code)]


CATEGORY_ORDER = list(PointCategory)


@dataclass(frozen=True, eq=False)
class Classification:
    """Per-point categories of the previous map and the cleaned session map.

    ``prev_match`` holds the nearest session point of each coexisting map
    point and ``session_match`` the nearest map point of each coexisting
    session point; both are -1 elsewhere.
    """

    prev: np.ndarray
    session: np.ndarray
    prev_match: np.ndarray
    session_match: np.ndarray

    def prev_is(self, category: PointCategory) -> np.ndarray:
        return self.prev == category.code

    def session_is(self, category: PointCategory) -> np.ndarray:
        return self.session == category.code

    def counts(self) -> dict[PointCategory, int]:
        out = {}
        for cat in PointCategory:
            out[cat] = int(np.count_nonzero(self.prev == cat.code) + np.count_nonzero(self.session == cat.code))
        return out


def classify_points(
    prev_map: AttributedPointCloud,
    session_map: AttributedPointCloud,
    prev_cov: Optional[CoverageGrid],
    curr_cov: Optional[CoverageGrid],
    nn_radius: float,
) -> Classification:
    """
    Assign every point of both clouds to one of the five change categories.

    Args:
        prev_map: Lifelong map before the update
        session_map: Cleaned, aligned session map
        prev_cov: Coverage of the sessions already in the map
        curr_cov: Coverage of the new session
        nn_radius: Correspondence radius (m)

    Raises:
        MapUpdateError: If either coverage grid is missing
    """
    if prev_cov is None or curr_cov is None:
        raise MapUpdateError("classification needs both coverage grids")

    n_prev, n_sess = len(prev_map), len(session_map)
    prev_match = np.full(n_prev, -1, dtype=np.int64)
    session_match = np.full(n_sess, -1, dtype=np.int64)
    if n_prev and n_sess:
        prev_match, _ = KdIndex(session_map.positions).nearest(prev_map.positions, nn_radius)
        session_match, _ = KdIndex(prev_map.positions).nearest(session_map.positions, nn_radius)

    prev_cat = np.where(
        curr_cov.contains(prev_map.positions),
        PointCategory.DELETED.code,
        PointCategory.PREV_EXPLORED.code,
    ).astype(np.int8)
    prev_cat[prev_match >= 0] = PointCategory.COEXISTING.code

    session_cat = np.where(
        prev_cov.contains(session_map.positions),
        PointCategory.EMERGED.code,
        PointCategory.NEWLY_EXPLORED.code,
    ).astype(np.int8)
    session_cat[session_match >= 0] = PointCategory.COEXISTING.code
    return Classification(prev_cat, session_cat, prev_match, session_match)


def bayes_update_global(prev_eps_g: Number, eps_l: Number) -> Number:
    """Fuse the previous eps_g with the session's eps_l, then clamp."""
    return clamp_eph(bayes_fuse(prev_eps_g, eps_l))


def objectness_factors(points: np.ndarray, radius: float, saturation: int) -> np.ndarray:
    """
    Objectness of every point of a set, from its neighbour count in that set.

    rho = min(1, count / saturation) and gamma = rho ** (1/3); the point
    itself is not counted.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return np.zeros(0)
    counts = KdIndex(points).radius_counts(points, radius, exclude_member=True)
    rho = np.minimum(1.0, counts / float(saturation))
    return np.cbrt(rho)


def objectness(point_id: int, members: KdIndex, radius: float, saturation: int) -> float:
    """Objectness of one member of an indexed point set."""
    count = members.radius_count(members.points[point_id], radius, exclude_member=True)
    return float(np.cbrt(min(1.0, count / float(saturation))))


def update_deleted(prev_eps_g: Number, gamma: Number) -> Number:
    """Global ephemerality of a deleted point: fuse with the clamped objectness."""
    return clamp_eph(bayes_fuse(prev_eps_g, clamp_eph(gamma)))


def update_emerged(eps_l: Number, gamma: Number, k: float) -> Number:
    """Initial global ephemerality of an emerged point: clamp(k * (2 - gamma) * eps_l)."""
    return clamp_eph(k * (2.0 - np.asarray(gamma, dtype=np.float64)) * eps_l)


@dataclass(frozen=True)
class DeltaRecord:
    """One changed point of a map update."""

    position: tuple[float, float, float]
    category: PointCategory
    eps_g_before: float
    eps_g_after: float
    gamma: float

    @property
    def delta(self) -> float:
        return self.eps_g_after - self.eps_g_before


@dataclass(frozen=True, eq=False)
class DeltaMap:
    """Changes one session made to the lifelong map, in column form."""

    session_id: str
    config_hash: str
    positions: np.ndarray
    categories: np.ndarray
    eps_before: np.ndarray
    eps_after: np.ndarray
    gamma: np.ndarray

    @classmethod
    def empty(cls, session_id: str, config_hash: str = "") -> "DeltaMap":
        return cls(session_id, config_hash, np.zeros((0, 3)), np.zeros(0, np.int8), np.zeros(0), np.zeros(0), np.zeros(0))

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def delta(self) -> np.ndarray:
        return self.eps_after - self.eps_before

    @property
    def records(self) -> list[DeltaRecord]:
        return [
            DeltaRecord(
                tuple(float(v) for v in self.positions[i]),
                PointCategory.from_code(self.categories[i]),
                float(self.eps_before[i]),
                float(self.eps_after[i]),
                float(self.gamma[i]),
            )
            for i in range(len(self))
        ]

    def mask(self, *categories: PointCategory) -> np.ndarray:
        codes = [c.code for c in categories]
        return np.isin(self.categories, codes)

    def summary(self) -> dict[str, dict[str, float]]:
        """Record count and mean / max |delta eps_g| per category."""
        out = {}
        delta = np.abs(self.delta)
        for cat in PointCategory:
            sel = self.categories == cat.code
            n = int(sel.sum())
            if n == 0:
                continue
            out[cat.value] = {
                "count": n,
                "mean_abs_delta": float(delta[sel].mean()),
                "max_abs_delta": float(delta[sel].max()),
            }
        return out


@dataclass(frozen=True, eq=False)
class UpdateResult:
    """New lifelong map plus what changed."""

    new_map: AttributedPointCloud
    delta: DeltaMap
    classification: Classification
    merged: AttributedPointCloud = field(repr=False)


def merge_and_update(
    prev_map: AttributedPointCloud,
    cleaned_session: AttributedPointCloud,
    prev_cov: Optional[CoverageGrid],
    curr_cov: Optional[CoverageGrid],
    config: PipelineConfig,
    session_id: str = "session",
    config_digest: str = "",
) -> UpdateResult:
    """
    Merge a cleaned session into the lifelong map.

    Map points are listed first (with updated eps_g), followed by the session's
    emerged and newly explored points in session order; the union is then
    voxel-compacted when compact_map is set.

    Raises:
        MapUpdateError: If the cleaned session is empty
    """
    if len(cleaned_session) == 0:
        raise MapUpdateError("cleaned session map is empty")

    cls = classify_points(prev_map, cleaned_session, prev_cov, curr_cov, config.nn_radius)

    # Map side
    prev_g = prev_map.eps_g
    new_g = prev_g.copy()
    new_l = prev_map.eps_l.copy()
    prev_gamma = np.zeros(len(prev_map))

    coexist = cls.prev_is(PointCategory.COEXISTING)
    matched_l = cleaned_session.eps_l[cls.prev_match[coexist]]
    new_g[coexist] = bayes_update_global(prev_g[coexist], matched_l)
    new_l[coexist] = matched_l

    deleted = cls.prev_is(PointCategory.DELETED)
    if deleted.any():
        gamma = objectness_factors(prev_map.positions[deleted], config.density_radius, config.density_saturation)
        prev_gamma[deleted] = gamma
        new_g[deleted] = update_deleted(prev_g[deleted], gamma)

    # Session side
    emerged = cls.session_is(PointCategory.EMERGED)
    newly = cls.session_is(PointCategory.NEWLY_EXPLORED)
    added = emerged | newly
    sess_g = cleaned_session.eps_l.copy()
    sess_gamma = np.zeros(len(cleaned_session))
    sess_before = cleaned_session.eps_l.copy()
    if emerged.any():
        gamma = objectness_factors(
            cleaned_session.positions[emerged], config.density_radius, config.density_saturation
        )
        sess_gamma[emerged] = gamma
        sess_g[emerged] = update_emerged(cleaned_session.eps_l[emerged], gamma, config.k_uncertainty)
        sess_before[emerged] = EPS_INIT

    updated_prev = prev_map.replace(eps_l=new_l, eps_g=new_g)
    additions = AttributedPointCloud(
        cleaned_session.positions[added],
        cleaned_session.eps_l[added],
        sess_g[added],
        prev_map.frame_id,
    )
    merged = AttributedPointCloud.concat([updated_prev, additions], frame_id=prev_map.frame_id)
    new_map = voxel_downsample(merged, config.voxel_size) if config.compact_map else merged

    changed = (new_g != prev_g) | deleted
    delta = DeltaMap(
        session_id=session_id,
        config_hash=config_digest,
        positions=np.concatenate([prev_map.positions[changed], cleaned_session.positions[added]]),
        categories=np.concatenate([cls.prev[changed], cls.session[added]]).astype(np.int8),
        eps_before=np.concatenate([prev_g[changed], sess_before[added]]),
        eps_after=np.concatenate([new_g[changed], sess_g[added]]),
        gamma=np.concatenate([prev_gamma[changed], sess_gamma[added]]),
    )

    counts = cls.counts()
    logger.info(
        "update %s: %s",
        session_id,
        ", ".join(f"{cat.value}={n}" for cat, n in counts.items()),
    )
    return UpdateResult(new_map, delta, cls, merged)


def _position_keys(positions: np.ndarray) -> list[bytes]:
    arr = np.ascontiguousarray(positions, dtype=np.float64)
    return [row.tobytes() for row in arr]


def replay_delta(
    prev_map: AttributedPointCloud, delta: DeltaMap, config: PipelineConfig
) -> AttributedPointCloud:
    """
    Rebuild the next map from the previous one and a delta map.

    eps_g and positions reproduce the original update exactly; added points
    take eps_l from their recorded eps_g.

    Raises:
        MapUpdateError: If a map-side record has no point at its position
    """
    added = delta.mask(PointCategory.EMERGED, PointCategory.NEWLY_EXPLORED)
    lookup = {key: i for i, key in enumerate(_position_keys(prev_map.positions))}

    eps_g = prev_map.eps_g.copy()
    for key, after in zip(_position_keys(delta.positions[~added]), delta.eps_after[~added]):
        idx = lookup.get(key)
        if idx is None:
            raise MapUpdateError("delta record does not match any point of the previous map")
        eps_g[idx] = after

    additions = AttributedPointCloud(
        delta.positions[added], delta.eps_after[added], delta.eps_after[added], prev_map.frame_id
    )
    merged = AttributedPointCloud.concat([prev_map.replace(eps_g=eps_g), additions], frame_id=prev_map.frame_id)
    return voxel_downsample(merged, config.voxel_size) if config.compact_map else merged


def rollback_delta(
    new_map: AttributedPointCloud, delta: DeltaMap, config: PipelineConfig
) -> AttributedPointCloud:
    """
    Undo a delta map: drop the points it added and restore previous eps_g.

    Exact when compaction merged no added point into an existing cell;
    otherwise points are matched to the nearest map point within voxel_size.
    """
    if len(new_map) == 0:
        return new_map
    index = KdIndex(new_map.positions)
    lookup = {key: i for i, key in enumerate(_position_keys(new_map.positions))}

    def _locate(positions: np.ndarray) -> np.ndarray:
        found = np.array([lookup.get(k, -1) for k in _position_keys(positions)], dtype=np.int64)
        missing = found < 0
        if missing.any():
            ids, _ = index.nearest(positions[missing], config.voxel_size)
            found[missing] = ids
        return found

    added = delta.mask(PointCategory.EMERGED, PointCategory.NEWLY_EXPLORED)
    eps_g = new_map.eps_g.copy()
    restore = _locate(delta.positions[~added])
    ok = restore >= 0
    eps_g[restore[ok]] = delta.eps_before[~added][ok]

    keep = np.ones(len(new_map), dtype=bool)
    drop = _locate(delta.positions[added])
    keep[drop[drop >= 0]] = False
    unmatched = int(np.count_nonzero(~ok) + np.count_nonzero(drop < 0))
    if unmatched:
        logger.warning("rollback left %d delta records unmatched", unmatched)
    return new_map.replace(eps_g=eps_g).subset(keep)


def extract_static_map(cloud: AttributedPointCloud, tau_g: float) -> AttributedPointCloud:
    """Points whose eps_g is strictly below ``tau_g``."""
    if not 0.0 < tau_g < 1.0:
        raise ValueError("tau_g must lie in (0, 1)")
    return cloud.subset(cloud.eps_g < tau_g)


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Change frequency per grid cell, normalised by the busiest cell."""

    cell: float
    cells: np.ndarray
    counts: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.cells)

    def value_at(self, point: np.ndarray) -> float:
        key = pack_keys(cell_keys(np.asarray(point).reshape(1, 3), self.cell))[0]
        hits = np.flatnonzero(pack_keys(self.cells) == key)
        return float(self.values[hits[0]]) if len(hits) else 0.0


def export_heatmap(deltas: list[DeltaMap], cell: float, floor: float = 0.1) -> Heatmap:
    """
    Count, per cell, the delta records whose |delta eps_g| exceeds ``floor``.

    Every cell touched by any record is listed; values are counts divided by
    the maximum count (all zero when nothing exceeds the floor).

    Raises:
        ValueError: If no delta map is given
    """
    if not deltas:
        raise ValueError("at least one delta map is required")
    positions = np.concatenate([d.positions for d in deltas])
    if len(positions) == 0:
        return Heatmap(cell, np.zeros((0, 3), np.int64), np.zeros(0, np.int64), np.zeros(0))
    changed = np.concatenate([np.abs(d.delta) > floor for d in deltas])

    keys = pack_keys(cell_keys(positions, cell))
    uniq, inverse = np.unique(keys, return_inverse=True)
    counts = np.bincount(inverse.reshape(-1), weights=changed.astype(np.float64), minlength=len(uniq))
    counts = counts.astype(np.int64)
    peak = counts.max()
    values = counts / peak if peak > 0 else np.zeros(len(uniq))
    return Heatmap(cell, unpack_keys(uniq), counts, values)
