"""
vigg | Copyright (c) The vigg developers
"""
import typing as t
from dataclasses import dataclass

import numpy as np

from .exceptions import DimMismatch, EmptyCloud, InvalidConfig, MissingNormals
from .geometry import CorrespondenceSet, PointCloud, Provenance
from .spatial import FeatureIndex, SpatialIndex3
from .utils import logger, make_rng, readonly, sample_indices
from .weights import kernel_weights


KNN_FALLBACK = 5
PAIR_CHUNK = 200_000


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """
    One descriptor per cloud point, index-aligned with the cloud.
    Stored as float32, the precision of feature files.
    """

    vectors: np.ndarray

    def __post_init__(self) -> None:
        vec = np.array(self.vectors, dtype=np.float32)
        if vec.ndim != 2 or vec.shape[1] == 0:
            raise DimMismatch(f"feature vectors must have shape (N, dim), got {vec.shape}")
        if not np.isfinite(vec).all():
            raise ValueError("feature vectors contain non-finite values")
        object.__setattr__(self, "vectors", readonly(vec))

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.vectors)

    def select(self, indices: t.Any) -> "FeatureSet":
        return FeatureSet(self.vectors[indices])

    def with_noise(self, sigma: float, seed: "int | np.random.Generator | None" = None) -> "FeatureSet":
        rng = make_rng(seed)
        noise = rng.normal(scale=sigma, size=self.vectors.shape) if sigma > 0 else 0.0
        return FeatureSet(self.vectors.astype(np.float64) + noise)


@dataclass(frozen=True)
class DescriptorParams:
    normal_radius: float
    feature_radius: float
    bins_per_angle: int = 11

    def __post_init__(self) -> None:
        if not (self.normal_radius > 0 and self.feature_radius > 0):
            raise InvalidConfig("descriptor radii must be positive")
        if self.feature_radius < self.normal_radius:
            raise InvalidConfig("feature_radius must be >= normal_radius")
        if self.bins_per_angle < 1:
            raise InvalidConfig("bins_per_angle must be a positive integer")

    @classmethod
    def for_voxel(cls, voxel: float) -> "DescriptorParams":
        return cls(normal_radius=2.0 * voxel, feature_radius=5.0 * voxel)

    @property
    def dim(self) -> int:
        return 3 * self.bins_per_angle


def _flatten(neighbors: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    counts = np.fromiter((len(n) for n in neighbors), dtype=np.int64, count=len(neighbors))
    rows = np.repeat(np.arange(len(neighbors), dtype=np.int64), counts)
    cols = np.concatenate(neighbors) if len(neighbors) else np.empty(0, dtype=np.int64)
    return rows, cols.astype(np.int64)


def estimate_normals(cloud: PointCloud, radius: float) -> PointCloud:
    """
    Unit normals from the PCA of each point's `radius` neighborhood.

    Points with fewer than 3 neighbors (itself included) use their 5 nearest
    neighbors instead. Normals point away from the cloud centroid.
    """
    if not radius > 0:
        raise InvalidConfig(f"normal radius must be positive, got {radius}")
    if not len(cloud):
        raise EmptyCloud("cannot estimate normals of an empty cloud")

    pts = cloud.points
    index = SpatialIndex3(pts)
    neighbors = index.radius_neighbors(radius)
    sparse = [i for i, nb in enumerate(neighbors) if len(nb) < 3]
    if sparse:
        knn = index.knn(pts[sparse], KNN_FALLBACK)
        for i, nb in zip(sparse, knn, strict=True):
            neighbors[i] = np.sort(nb)
        logger.debug("%d points fell back to %d-NN normals", len(sparse), KNN_FALLBACK)

    rows, cols = _flatten(neighbors)
    counts = np.bincount(rows, minlength=len(pts)).astype(np.float64)
    means = np.zeros((len(pts), 3))
    np.add.at(means, rows, pts[cols])
    means /= counts[:, None]
    diff = pts[cols] - means[rows]
    cov = np.zeros((len(pts), 3, 3))
    np.add.at(cov, rows, diff[:, :, None] * diff[:, None, :])

    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    outward = pts - pts.mean(axis=0)
    side = np.einsum("ij,ij->i", normals, outward)
    scale = np.linalg.norm(outward, axis=1)
    undecided = np.abs(side) <= 1e-9 * scale + 1e-12
    # Tangent to the centroid direction: make the dominant component positive.
    dominant = normals[np.arange(len(pts)), np.abs(normals).argmax(axis=1)]
    flip = np.where(undecided, dominant < 0, side < 0)
    normals[flip] *= -1.0
    return cloud.with_normals(normals)


def pair_features(
    p_s: np.ndarray, n_s: np.ndarray, p_t: np.ndarray, n_t: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Darboux-frame angular triplet `(f1, f2, f3)` of each (source, target) pair.
    `f1` is an angle in [-π, π]; `f2`, `f3` are cosines in [-1, 1].
    Degenerate pairs (coincident points, normal along the pair) give zeros.
    """
    dp = p_t - p_s
    dist = np.linalg.norm(dp, axis=1)
    safe = np.where(dist > 0, dist, 1.0)
    angle1 = np.einsum("ij,ij->i", n_s, dp) / safe
    angle2 = np.einsum("ij,ij->i", n_t, dp) / safe

    swap = np.arccos(np.clip(np.abs(angle1), 0, 1)) > np.arccos(np.clip(np.abs(angle2), 0, 1))
    n1 = np.where(swap[:, None], n_t, n_s)
    n2 = np.where(swap[:, None], n_s, n_t)
    dp = np.where(swap[:, None], -dp, dp)
    f3 = np.where(swap, -angle2, angle1)

    v = np.cross(dp, n1)
    vnorm = np.linalg.norm(v, axis=1)
    valid = (dist > 0) & (vnorm > 0)
    v = v / np.where(vnorm > 0, vnorm, 1.0)[:, None]
    w = np.cross(n1, v)
    f2 = np.einsum("ij,ij->i", v, n2)
    f1 = np.arctan2(np.einsum("ij,ij->i", w, n2), np.einsum("ij,ij->i", n1, n2))

    zero = np.zeros_like(f1)
    return np.where(valid, f1, zero), np.where(valid, f2, zero), np.where(valid, f3, zero)


def _bins(f1: np.ndarray, f2: np.ndarray, f3: np.ndarray, nb: int) -> np.ndarray:
    b1 = np.floor(nb * (f1 + np.pi) / (2.0 * np.pi)).astype(np.int64)
    b2 = np.floor(nb * (f2 + 1.0) * 0.5).astype(np.int64)
    b3 = np.floor(nb * (f3 + 1.0) * 0.5).astype(np.int64)
    b1 = np.clip(b1, 0, nb - 1)
    b2 = np.clip(b2, 0, nb - 1) + nb
    b3 = np.clip(b3, 0, nb - 1) + 2 * nb
    return np.stack([b1, b2, b3], axis=1)


def compute_descriptor(cloud: PointCloud, params: DescriptorParams) -> FeatureSet:
    """
    Fast point feature histograms: three angular histograms of
    `bins_per_angle` bins each, every block summing to 100 (all zeros for a
    point with no neighbor within `feature_radius`).

    Each point's simplified histogram is built from the pairs it forms with
    its neighbors, then its final histogram adds the neighbors' simplified
    histograms weighted by inverse distance.
    """
    if cloud.normals is None:
        raise MissingNormals("compute_descriptor needs a cloud with normals")
    nb = params.bins_per_angle
    dim = params.dim
    n = len(cloud)
    if not n:
        return FeatureSet(np.zeros((0, dim)))

    pts, nrm = cloud.points, cloud.normals
    neighbors = SpatialIndex3(pts).radius_neighbors(params.feature_radius)
    rows, cols = _flatten(neighbors)
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    k = np.bincount(rows, minlength=n).astype(np.float64)

    spfh = np.zeros((n, dim))
    for start in range(0, len(rows), PAIR_CHUNK):
        r = rows[start:start + PAIR_CHUNK]
        c = cols[start:start + PAIR_CHUNK]
        bins = _bins(*pair_features(pts[r], nrm[r], pts[c], nrm[c]), nb)
        inc = 100.0 / k[r]
        for col in range(3):
            np.add.at(spfh, (r, bins[:, col]), inc)

    agg = np.zeros((n, dim))
    dist = np.linalg.norm(pts[cols] - pts[rows], axis=1)
    usable = dist > 0
    for start in range(0, len(rows), PAIR_CHUNK):
        r = rows[start:start + PAIR_CHUNK]
        c = cols[start:start + PAIR_CHUNK]
        d = dist[start:start + PAIR_CHUNK]
        u = usable[start:start + PAIR_CHUNK]
        np.add.at(agg, r[u], spfh[c[u]] / d[u, None])
    has = k > 0
    agg[has] /= k[has, None]

    fpfh = (spfh + agg).reshape(n, 3, nb)
    sums = fpfh.sum(axis=2, keepdims=True)
    fpfh = np.divide(100.0 * fpfh, sums, out=np.zeros_like(fpfh), where=sums > 0)
    logger.debug("descriptor: %d points, %d neighbor pairs, dim %d", n, len(rows), dim)
    return FeatureSet(fpfh.reshape(n, dim))


def describe(cloud: PointCloud, params: DescriptorParams) -> tuple[PointCloud, FeatureSet]:
    """
    Estimates normals (unless present) and computes the descriptor.
    """
    if cloud.normals is None:
        cloud = estimate_normals(cloud, params.normal_radius)
    return cloud, compute_descriptor(cloud, params)


def check_aligned(features: FeatureSet, cloud: PointCloud, name: str = "features") -> None:
    if len(features) != len(cloud):
        raise DimMismatch(
            f"{name} has {len(features)} vectors but its cloud has {len(cloud)} points"
        )


def global_feature_match(
    fp: FeatureSet,
    fq: FeatureSet,
    cloud_p: PointCloud,
    cloud_q: PointCloud,
    max_pairs: int | None,
    *,
    seed: "int | np.random.Generator | None" = 0,
    bandwidth: float | None = None,
) -> CorrespondenceSet:
    """
    Feature-space nearest neighbor in Q of each (sampled) point of P.

    No mutual check and no ratio test: the output is raw guidance and
    keeps its outliers.
    """
    if fp.dim != fq.dim:
        raise DimMismatch(f"feature dimensions differ: {fp.dim} != {fq.dim}")
    check_aligned(fp, cloud_p, "fp")
    check_aligned(fq, cloud_q, "fq")
    if not len(cloud_p) or not len(cloud_q):
        return CorrespondenceSet.empty()

    src_idx = sample_indices(len(cloud_p), max_pairs, make_rng(seed))
    dst_idx, dist = FeatureIndex(fq.vectors).nearest_many(fp.vectors[src_idx])
    logger.debug("global matching: %d source points against %d targets", len(src_idx), len(fq))
    return CorrespondenceSet.from_arrays(
        cloud_p.points[src_idx],
        cloud_q.points[dst_idx],
        kernel_weights(dist, bandwidth),
        provenance=Provenance.GEOMETRIC,
        src_index=src_idx,
        dst_index=dst_idx,
    )
