from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from errors import ArgumentError, DimensionError

IDW_EPS = 1e-10
KNN_TIE_TOL = 1e-9


@dataclass
class PointCloud:
    coords: np.ndarray                 # N x 3
    feats: np.ndarray | None = None    # N x (d - 3)
    labels: np.ndarray | None = None   # N integer class ids

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise DimensionError(f"coords must be N x 3, got {self.coords.shape}")
        if self.coords.shape[0] < 1:
            raise ArgumentError("point cloud needs at least one point")
        if not np.isfinite(self.coords).all():
            raise ArgumentError("point cloud has non-finite coordinates")
        n = self.coords.shape[0]
        if self.feats is not None:
            self.feats = np.asarray(self.feats, dtype=np.float64)
            if self.feats.ndim == 1:
                self.feats = self.feats[:, None]
            if self.feats.shape[0] != n:
                raise DimensionError(f"feats has {self.feats.shape[0]} rows for {n} points")
            if self.feats.shape[1] == 0:
                self.feats = None
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.shape[0] != n:
                raise DimensionError(f"labels has {self.labels.shape[0]} entries for {n} points")

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def feat_dim(self) -> int:
        return 0 if self.feats is None else self.feats.shape[1]

    def take(self, order: np.ndarray) -> "PointCloud":
        """Reindex points (permutation or subset)."""
        return PointCloud(
            self.coords[order],
            None if self.feats is None else self.feats[order],
            None if self.labels is None else self.labels[order],
        )


@dataclass
class NeighborIndex:
    centroids: np.ndarray                       # M x 3
    neighbor_ids: list[np.ndarray]              # per centroid, ascending distance
    distances: list[np.ndarray]
    centroid_ids: np.ndarray | None = None
    radius: float | None = None
    counts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.counts = np.array([len(ids) for ids in self.neighbor_ids], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.neighbor_ids)

    def padded(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """
        M x k index array. Short lists repeat their nearest entry; empty lists
        are filled with -1 and flagged in the returned mask.
        """
        idx = np.full((len(self), k), -1, dtype=np.int64)
        empty = self.counts == 0
        for row, ids in enumerate(self.neighbor_ids):
            if len(ids) == 0:
                continue
            take = ids[:k]
            idx[row, : len(take)] = take
            idx[row, len(take):] = ids[0]
        return idx, empty


def _coords(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.coords
    arr = np.asarray(cloud, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DimensionError(f"expected M x 3 coordinates, got {arr.shape}")
    return arr


def pairwise_distances(queries: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Exact Euclidean distances, Q x S. Explicit differences keep results translation-stable."""
    diff = queries[:, None, :] - source[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _sorted_rows(dist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # stable sort keeps the lowest index first among equal distances
    order = np.argsort(dist, axis=1, kind="stable")
    return order, np.take_along_axis(dist, order, axis=1)


def start_index(coords: np.ndarray, seed: int) -> int:
    """
    Seeded first FPS centroid: the extreme point along a random direction.
    Depends only on geometry, so it survives any reordering of the points.
    """
    direction = np.random.default_rng(seed).normal(size=3)
    return int(np.argmax((coords * direction).sum(axis=1)))


def fps(cloud, m: int, seed: int = 0, start: int | None = None) -> np.ndarray:
    coords = _coords(cloud)
    n = coords.shape[0]
    if not 1 <= m <= n:
        raise ArgumentError(f"fps: cannot sample {m} centroids from {n} points")
    first = start_index(coords, seed) if start is None else int(start)
    if not 0 <= first < n:
        raise ArgumentError(f"fps: start index {first} out of range for {n} points")

    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = first
    min_sq = np.full(n, np.inf)
    for i in range(1, m):
        diff = coords - coords[chosen[i - 1]]
        min_sq = np.minimum(min_sq, (diff * diff).sum(axis=1))
        min_sq[chosen[i - 1]] = -1.0
        chosen[i] = int(np.argmax(min_sq))
    return chosen


def ball_query_sorted(cloud, centroids: np.ndarray, radius: float, cap: int) -> NeighborIndex:
    if radius <= 0:
        raise ArgumentError(f"ball query radius must be positive, got {radius}")
    if cap < 1:
        raise ArgumentError(f"ball query cap must be >= 1, got {cap}")
    coords = _coords(cloud)
    centroids = _coords(centroids)
    order, dist = _sorted_rows(pairwise_distances(centroids, coords))
    inside = np.minimum((dist <= radius).sum(axis=1), cap)
    return NeighborIndex(
        centroids=centroids,
        neighbor_ids=[order[r, : inside[r]] for r in range(len(centroids))],
        distances=[dist[r, : inside[r]] for r in range(len(centroids))],
        radius=float(radius),
    )


def knn(query: np.ndarray, source, k: int) -> NeighborIndex:
    coords = _coords(source)
    query = _coords(query)
    if not 1 <= k <= coords.shape[0]:
        raise ArgumentError(f"knn: k={k} invalid for {coords.shape[0]} source points")
    ids, dist = knn_indices(query, coords, k)
    return NeighborIndex(centroids=query, neighbor_ids=list(ids), distances=list(dist))


def _exact_rows(query: np.ndarray, source: np.ndarray, cand: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Re-measure candidate ids with `pairwise_distances` arithmetic and order rows by (distance, id)."""
    diff = query[:, None, :] - source[cand]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    order = np.lexsort((cand, dist), axis=-1)
    return np.take_along_axis(cand, order, axis=1), np.take_along_axis(dist, order, axis=1)


def knn_indices(query: np.ndarray, source: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Dense (Q x k) ids and distances; same ordering contract as `knn`.

    Candidates come from a KD-tree. A row whose k-th and (k+1)-th distances
    are within KNN_TIE_TOL is re-read with a radius query so every tied
    point competes on the lowest-index rule.
    """
    n = source.shape[0]
    if not 1 <= k <= n:
        raise ArgumentError(f"knn: k={k} invalid for {n} source points")
    if query.shape[0] == 0:
        return np.empty((0, k), dtype=np.int64), np.empty((0, k))
    tree = cKDTree(source)
    width = min(n, k + 1)
    _, cand = tree.query(query, k=width)
    ids, dist = _exact_rows(query, source, np.asarray(cand, dtype=np.int64).reshape(query.shape[0], width))
    if width > k:
        tol = KNN_TIE_TOL * (1.0 + dist[:, k - 1])
        for row in np.flatnonzero(dist[:, k] - dist[:, k - 1] <= tol):
            found = np.asarray(tree.query_ball_point(query[row], dist[row, k - 1] + tol[row]), dtype=np.int64)
            row_ids, row_dist = _exact_rows(query[row:row + 1], source, found[None, :])
            ids[row, :k], dist[row, :k] = row_ids[0, :k], row_dist[0, :k]
    return ids[:, :k], dist[:, :k]


def idw_weights(distances, k: int | None = None) -> np.ndarray:
    """Inverse-squared-distance weights summing to one; exact hits get a one-hot weight."""
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if k is not None:
        d = d[:k]
    if d.size == 0:
        raise ArgumentError("idw_weights needs at least one neighbor")
    near = np.flatnonzero(d < IDW_EPS)
    w = np.zeros_like(d)
    if near.size:
        w[near[np.argmin(d[near])]] = 1.0
        return w
    w = 1.0 / (d * d)
    return w / w.sum()


def interpolation_matrix(targets: np.ndarray, sources: np.ndarray, k: int) -> np.ndarray:
    """T x S matrix whose rows hold IDW weights over each target's k nearest sources."""
    k = min(k, sources.shape[0])
    ids, dist = knn_indices(targets, sources, k)
    weights = np.zeros((targets.shape[0], sources.shape[0]))
    for row in range(targets.shape[0]):
        weights[row, ids[row]] = idw_weights(dist[row])
    return weights


def canonical_order(cloud: PointCloud) -> np.ndarray:
    """Lexicographic order over (x, y, z, feats...); identical for every permutation of the same set."""
    cols = [cloud.coords[:, 0], cloud.coords[:, 1], cloud.coords[:, 2]]
    if cloud.feats is not None:
        cols.extend(cloud.feats.T)
    return np.lexsort(tuple(reversed(cols)))
