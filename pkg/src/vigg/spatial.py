"""
vigg | Copyright (c) The vigg developers
"""
import typing as t

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import DimMismatch, EmptyIndex


# Relative slack given to the tree before the exact squared-distance filter.
_SLACK = 1e-9
KD_MAX_DIM = 16
SCAN_BLOCK = 1024
QUERY_BLOCK = 128


def _exact_filter(
    data: np.ndarray,
    center: np.ndarray,
    candidates: t.Sequence[int],
    radius_sq: float,
) -> np.ndarray:
    idx = np.fromiter(candidates, dtype=np.int64, count=len(candidates))
    if not len(idx):
        return idx
    diff = data[idx] - center
    d2 = np.einsum("ij,ij->i", diff, diff)
    return np.sort(idx[d2 <= radius_sq])


def _padded_radius(radius_sq: float) -> float:
    return float(np.sqrt(radius_sq)) * (1.0 + _SLACK) + _SLACK


class _KDIndex:
    """
    Exact radius and nearest-neighbor queries over a balanced KD partition.

    The tree only proposes candidates; membership is decided by the squared
    distance `Σ (x - c)²` so results equal an exhaustive scan.
    """

    def __init__(self, data: np.ndarray) -> None:
        self.data = data
        # balanced_tree gives a median split; the same input order builds the same tree.
        self.tree = cKDTree(data, balanced_tree=True, compact_nodes=True) if len(data) else None

    def __len__(self) -> int:
        return len(self.data)

    def radius_query_sq(self, center: t.Any, radius_sq: float) -> np.ndarray:
        c = np.asarray(center, dtype=np.float64)
        if self.tree is None or radius_sq < 0:
            return np.empty(0, dtype=np.int64)
        cand = self.tree.query_ball_point(c, _padded_radius(radius_sq))
        return _exact_filter(self.data, c, cand, radius_sq)

    def radius_query(self, center: t.Any, radius: float) -> np.ndarray:
        """
        Indices of the points within `radius` (inclusive), ascending.
        """
        return self.radius_query_sq(center, float(radius) * float(radius))

    def radius_query_many(self, centers: t.Any, radius_sq: float) -> list[np.ndarray]:
        cs = np.asarray(centers, dtype=np.float64)
        if self.tree is None or not len(cs):
            return [np.empty(0, dtype=np.int64) for _ in range(len(cs))]
        batches = self.tree.query_ball_point(cs, _padded_radius(radius_sq))
        return [
            _exact_filter(self.data, c, cand, radius_sq)
            for c, cand in zip(cs, batches, strict=True)
        ]

    def nearest_query(self, center: t.Any) -> tuple[int, float]:
        """
        The closest point and its distance. Ties go to the smallest index.
        """
        if self.tree is None:
            raise EmptyIndex("cannot query the nearest neighbor of an empty index")
        c = np.asarray(center, dtype=np.float64)
        dist, _ = self.tree.query(c, k=1)
        cand = self.tree.query_ball_point(c, float(dist) * (1.0 + _SLACK) + _SLACK)
        idx = np.asarray(cand, dtype=np.int64)
        diff = self.data[idx] - c
        d2 = np.einsum("ij,ij->i", diff, diff)
        best = d2.min()
        winner = int(idx[d2 == best].min())
        return winner, float(np.sqrt(best))

    def nearest_many(self, centers: t.Any) -> tuple[np.ndarray, np.ndarray]:
        cs = np.asarray(centers, dtype=np.float64)
        out_idx = np.empty(len(cs), dtype=np.int64)
        out_dist = np.empty(len(cs))
        for i, c in enumerate(cs):
            out_idx[i], out_dist[i] = self.nearest_query(c)
        return out_idx, out_dist


class SpatialIndex3(_KDIndex):
    """
    Exact index over 3D points, built once and shared read-only.
    """

    def __init__(self, points: t.Any) -> None:
        data = np.ascontiguousarray(points, dtype=np.float64)
        if data.size == 0:
            data = data.reshape(0, 3)
        if data.ndim != 2 or data.shape[1] != 3:
            raise ValueError(f"expected (N, 3) points, got {data.shape}")
        super().__init__(data)

    def radius_neighbors(self, radius: float) -> list[np.ndarray]:
        """
        For every indexed point, the ascending indices within `radius`
        (the point itself included).
        """
        return self.radius_query_many(self.data, float(radius) * float(radius))

    def knn(self, centers: t.Any, k: int) -> np.ndarray:
        """
        The `k` nearest indices of every center, closest first.
        """
        k = min(k, len(self))
        if self.tree is None or k == 0:
            return np.empty((len(centers), 0), dtype=np.int64)
        _, idx = self.tree.query(np.asarray(centers, dtype=np.float64), k=k)
        return np.asarray(idx, dtype=np.int64).reshape(len(centers), k)


class FeatureIndex:
    """
    Exact L2 nearest-neighbor index over fixed-dimension feature vectors.

    Uses a KD partition up to 16 dimensions and a blocked exhaustive scan
    above that.
    """

    def __init__(self, vectors: t.Any) -> None:
        data = np.ascontiguousarray(vectors, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"expected (N, dim) vectors, got {data.shape}")
        self.data = data
        self.dim = data.shape[1]
        self._kd = _KDIndex(data) if self.dim <= KD_MAX_DIM else None

    def __len__(self) -> int:
        return len(self.data)

    def nearest_query(self, center: t.Any) -> tuple[int, float]:
        idx, dist = self.nearest_many(np.asarray(center, dtype=np.float64)[None, :])
        return int(idx[0]), float(dist[0])

    def nearest_many(self, queries: t.Any) -> tuple[np.ndarray, np.ndarray]:
        """
        Nearest indexed vector (and its distance) for every query row.
        Ties go to the smallest index.
        """
        qs = np.asarray(queries, dtype=np.float64)
        if qs.ndim != 2 or qs.shape[1] != self.dim:
            raise DimMismatch(f"queries must have dimension {self.dim}, got {qs.shape}")
        if not len(self):
            raise EmptyIndex("cannot query the nearest neighbor of an empty index")
        if self._kd is not None:
            return self._kd.nearest_many(qs)
        return self._scan(qs)

    def _scan(self, qs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        best_idx = np.zeros(len(qs), dtype=np.int64)
        best_d2 = np.full(len(qs), np.inf)
        for qstart in range(0, len(qs), QUERY_BLOCK):
            q = qs[qstart:qstart + QUERY_BLOCK]
            b_idx = best_idx[qstart:qstart + QUERY_BLOCK]
            b_d2 = best_d2[qstart:qstart + QUERY_BLOCK]
            for start in range(0, len(self.data), SCAN_BLOCK):
                block = self.data[start:start + SCAN_BLOCK]
                diff = q[:, None, :] - block[None, :, :]
                d2 = np.einsum("qbd,qbd->qb", diff, diff)
                local = d2.argmin(axis=1)
                local_d2 = d2[np.arange(len(q)), local]
                # Strictly better only: earlier blocks hold smaller indices.
                better = local_d2 < b_d2
                b_idx[better] = local[better] + start
                b_d2[better] = local_d2[better]
        return best_idx, np.sqrt(best_d2)


def radius_query(index: SpatialIndex3, center: t.Any, radius: float) -> np.ndarray:
    return index.radius_query(center, radius)


def nearest_query(index: "SpatialIndex3 | FeatureIndex", center: t.Any) -> tuple[int, float]:
    return index.nearest_query(center)
