"""Spatial services: exact neighbour search, voxel compaction and coverage grids."""

from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .model import AttributedPointCloud

# Cell keys are packed into one int64: 21 bits per axis around this offset.
_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_KEY_MASK = (1 << _KEY_BITS) - 1


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between broadcastable (..., 3) arrays.

    Every neighbour distance in the package goes through this one formula so
    indexed and brute-force searches agree bit for bit.
    """
    d = a - b
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def order_neighbors(
    ids: np.ndarray, sq_dists: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """
    Sort candidate neighbours of each query by (distance, id) and keep k.

    Args:
        ids: (M, C) candidate point ids, -1 for padding
        sq_dists: (M, C) squared distances, inf for padding
        k: Neighbours to keep

    Returns:
        (ids, sq_dists), both (M, min(k, C)), padding sorted last
    """
    sort_ids = np.where(ids < 0, np.iinfo(np.int64).max, ids)
    order = np.lexsort((sort_ids, sq_dists), axis=-1)
    ids = np.take_along_axis(ids, order, axis=-1)[:, :k]
    sq_dists = np.take_along_axis(sq_dists, order, axis=-1)[:, :k]
    return ids, sq_dists


class KdIndex:
    """Exact k-d tree over a fixed point set."""

    def __init__(self, points: np.ndarray, leafsize: int = 16) -> None:
        """
        Build the index.

        Args:
            points: (N, 3) finite points, N >= 1
            leafsize: Tree leaf size

        Raises:
            ValueError: If the point set is empty or holds non-finite values
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("Cannot index an empty point set")
        if not np.all(np.isfinite(pts)):
            raise ValueError("Indexed points must be finite")
        self.points = pts
        self.leafsize = leafsize
        self._tree = cKDTree(pts, leafsize=leafsize)

    def __len__(self) -> int:
        return len(self.points)

    def knn(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        """Up to k (id, distance) pairs for one query, ascending by distance."""
        ids, sq = self.knn_batch(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
        valid = ids[0] >= 0
        return [(int(i), float(np.sqrt(s))) for i, s in zip(ids[0][valid], sq[0][valid])]

    def knn_batch(
        self,
        queries: np.ndarray,
        k: int,
        upper_bound: float = np.inf,
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        Exact k nearest neighbours of many queries.

        Args:
            queries: (M, 3) query points
            k: Neighbour count (>= 1)
            upper_bound: Neighbours farther than this are not returned (inclusive)

        Returns:
            (ids, sq_dists) of shape (M, min(k, N)); missing entries are -1 / inf
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        kk = min(k, n)
        if len(queries) == 0:
            return np.zeros((0, kk), dtype=np.int64), np.zeros((0, kk))

        # One spare candidate so ties at the k-th distance resolve by id.
        fetch = min(kk + 1, n)
        query_bound = upper_bound * (1.0 + 1e-9) + 1e-12 if np.isfinite(upper_bound) else np.inf
        _, ids = self._tree.query(queries, k=fetch, distance_upper_bound=query_bound)
        ids = np.asarray(ids, dtype=np.int64).reshape(len(queries), fetch)
        ids[ids >= n] = -1
        safe = np.where(ids < 0, 0, ids)
        sq = squared_distances(self.points[safe], queries[:, None, :])
        sq[ids < 0] = np.inf
        if np.isfinite(upper_bound):
            beyond = np.sqrt(sq) > upper_bound
            ids[beyond] = -1
            sq[beyond] = np.inf
        return order_neighbors(ids, sq, kk)

    def nearest(self, queries: np.ndarray, max_distance: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
        """Nearest neighbour id and distance per query (-1 / inf when none within range)."""
        ids, sq = self.knn_batch(queries, 1, upper_bound=max_distance)
        return ids[:, 0], np.sqrt(sq[:, 0])

    def radius_count(self, query: np.ndarray, radius: float, exclude_member: bool = True) -> int:
        """
        Number of indexed points within ``radius`` of ``query``.

        When ``exclude_member`` is set and the query coincides with an indexed
        point, that point is not counted.
        """
        return int(self.radius_counts(np.asarray(query).reshape(1, 3), radius, exclude_member)[0])

    def radius_counts(
        self, queries: np.ndarray, radius: float, exclude_member: bool = True
    ) -> np.ndarray:
        """Vectorised radius_count."""
        if radius <= 0:
            raise ValueError("radius must be > 0")
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(queries) == 0:
            return np.zeros(0, dtype=np.int64)
        counts = np.asarray(self._tree.query_ball_point(queries, r=radius, return_length=True))
        counts = counts.astype(np.int64)
        if exclude_member:
            _, dist = self.nearest(queries, max_distance=radius)
            counts -= (dist == 0.0).astype(np.int64)
        return counts

    def within(self, queries: np.ndarray, radius: float) -> np.ndarray:
        """Boolean mask: query has an indexed point within ``radius``."""
        _, dist = self.nearest(queries, max_distance=radius)
        return np.isfinite(dist)


def build_index(points: np.ndarray) -> KdIndex:
    """Build a KdIndex over a non-empty point set."""
    return KdIndex(points)


def cell_keys(points: np.ndarray, cell: float) -> np.ndarray:
    """Integer cell coordinates (M, 3) of points for a cubic grid."""
    if cell <= 0:
        raise ValueError("cell size must be > 0")
    return np.floor(np.asarray(points, dtype=np.float64) / cell).astype(np.int64)


def pack_keys(cells: np.ndarray) -> np.ndarray:
    """Pack (M, 3) integer cell coordinates into int64 keys."""
    c = np.asarray(cells, dtype=np.int64).reshape(-1, 3) + _KEY_OFFSET
    if np.any(c < 0) or np.any(c > _KEY_MASK):
        raise ValueError("cell coordinates outside the packable range")
    return (c[:, 0] << (2 * _KEY_BITS)) | (c[:, 1] << _KEY_BITS) | c[:, 2]


def unpack_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    cells = np.stack(
        [(keys >> (2 * _KEY_BITS)) & _KEY_MASK, (keys >> _KEY_BITS) & _KEY_MASK, keys & _KEY_MASK],
        axis=1,
    )
    return cells - _KEY_OFFSET


def voxel_downsample(cloud: AttributedPointCloud, cell: float) -> AttributedPointCloud:
    """
    Compact a cloud to one point per occupied cell.

    The representative is the centroid of the cell's points; eps_l and eps_g
    take the maximum within the cell. Output is ordered by cell key.

    Args:
        cloud: Cloud to compact
        cell: Cell edge length (m), > 0

    Returns:
        The compacted cloud
    """
    if cell <= 0:
        raise ValueError("cell size must be > 0")
    if len(cloud) == 0:
        return cloud
    keys = pack_keys(cell_keys(cloud.positions, cell))
    uniq, inverse = np.unique(keys, return_inverse=True)
    inverse = inverse.reshape(-1)
    m = len(uniq)

    counts = np.bincount(inverse, minlength=m).astype(np.float64)
    centroid = np.empty((m, 3))
    for axis in range(3):
        centroid[:, axis] = np.bincount(inverse, weights=cloud.positions[:, axis], minlength=m) / counts

    eps_l = np.full(m, -np.inf)
    eps_g = np.full(m, -np.inf)
    np.maximum.at(eps_l, inverse, cloud.eps_l)
    np.maximum.at(eps_g, inverse, cloud.eps_g)
    return AttributedPointCloud(centroid, eps_l, eps_g, cloud.frame_id)


class CoverageGrid:
    """Set of coarse cells a session observed (endpoints and free samples)."""

    def __init__(self, cell: float, keys: Optional[np.ndarray] = None) -> None:
        if cell <= 0:
            raise ValueError("cell size must be > 0")
        self.cell = float(cell)
        if keys is None:
            keys = np.zeros(0, dtype=np.int64)
        self._keys = np.unique(np.asarray(keys, dtype=np.int64))

    @classmethod
    def from_cells(cls, cells: np.ndarray, cell: float) -> "CoverageGrid":
        return cls(cell, pack_keys(cells))

    def __len__(self) -> int:
        return len(self._keys)

    @property
    def keys(self) -> np.ndarray:
        return self._keys

    def cells(self) -> np.ndarray:
        """Observed cells as (M, 3) integer coordinates, in key order."""
        return unpack_keys(self._keys)

    def add(self, samples: np.ndarray) -> "CoverageGrid":
        """Return a grid that also marks the cells of ``samples``."""
        samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
        new = pack_keys(cell_keys(samples, self.cell)) if len(samples) else np.zeros(0, dtype=np.int64)
        return CoverageGrid(self.cell, np.concatenate([self._keys, new]))

    def union(self, other: "CoverageGrid") -> "CoverageGrid":
        if other.cell != self.cell:
            raise ValueError("Cannot merge coverage grids with different cell sizes")
        return CoverageGrid(self.cell, np.concatenate([self._keys, other._keys]))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask: point lies in an observed cell."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0 or len(self._keys) == 0:
            return np.zeros(len(points), dtype=bool)
        keys = pack_keys(cell_keys(points, self.cell))
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        return self._keys[pos] == keys


def build_coverage(samples: np.ndarray, cell: float) -> CoverageGrid:
    """Coverage grid marking exactly the cells that hold at least one sample."""
    return CoverageGrid(cell).add(samples)
