"""
vigg | Copyright (c) The vigg developers
"""
import typing as t
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import DegenerateInput, EmptyCloud, InvalidTransform, InvalidVoxel
from .utils import logger, make_rng, readonly


ORTHONORMAL_TOL = 1e-9
NORMAL_TOL = 1e-6
COLLINEAR_RATIO = 1e-9

# A point is a length-3 float64 array.
Point3 = np.ndarray


def as_points(data: t.Any, *, name: str = "points") -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"`{name}` must have shape (N, 3), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"`{name}` contains non-finite coordinates")
    return arr


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """
    An element of SE(3): `x -> rotation @ x + translation`.

    The rotation is checked at construction: orthonormal with
    determinant +1 within 1e-9.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.array(self.rotation, dtype=np.float64)
        tra = np.array(self.translation, dtype=np.float64).reshape(-1)
        if rot.shape != (3, 3) or tra.shape != (3,):
            raise InvalidTransform(
                f"expected a 3x3 rotation and a 3-vector, got {rot.shape} and {tra.shape}"
            )
        if not (np.isfinite(rot).all() and np.isfinite(tra).all()):
            raise InvalidTransform("transform contains non-finite values")
        if np.abs(rot.T @ rot - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise InvalidTransform("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidTransform("rotation determinant is not +1")
        object.__setattr__(self, "rotation", readonly(rot))
        object.__setattr__(self, "translation", readonly(tra))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: t.Any) -> "RigidTransform":
        """
        Builds a transform from a 4x4 homogeneous matrix (or 16 row-major values).
        """
        mat = np.array(matrix, dtype=np.float64)
        if mat.size != 16:
            raise InvalidTransform(f"expected 16 values for a 4x4 matrix, got {mat.size}")
        mat = mat.reshape(4, 4)
        if np.abs(mat[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > ORTHONORMAL_TOL:
            raise InvalidTransform("last row of a rigid transform must be (0, 0, 0, 1)")
        return cls(mat[:3, :3], mat[:3, 3])

    @classmethod
    def from_axis_angle(
        cls,
        axis: t.Sequence[float],
        degrees: float,
        translation: t.Sequence[float] = (0.0, 0.0, 0.0),
    ) -> "RigidTransform":
        unit = np.asarray(axis, dtype=np.float64)
        unit = unit / np.linalg.norm(unit)
        rot = Rotation.from_rotvec(unit * np.deg2rad(degrees)).as_matrix()
        return cls(rot, translation)

    @classmethod
    def random(
        cls,
        seed: "int | np.random.Generator | None" = None,
        *,
        max_translation: float = 1.0,
        max_degrees: float | None = None,
    ) -> "RigidTransform":
        """
        A random transform. Rotations are uniform over SO(3) unless
        `max_degrees` bounds the angle (uniform random axis, uniform angle).
        """
        rng = make_rng(seed)
        if max_degrees is None:
            rot = Rotation.random(random_state=rng).as_matrix()
        else:
            axis = rng.normal(size=3)
            angle = rng.uniform(0.0, max_degrees)
            rot = Rotation.from_rotvec(axis / np.linalg.norm(axis) * np.deg2rad(angle)).as_matrix()
        tra = rng.uniform(-max_translation, max_translation, size=3)
        return cls(rot, tra)

    @property
    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    def apply(self, points: t.Any) -> np.ndarray:
        """
        Applies the transform to one point (3,) or many points (N, 3).
        """
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """
        `self ∘ other`: applies `other` first.
        """
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rot_t = self.rotation.T
        return RigidTransform(rot_t, -rot_t @ self.translation)

    def as_list(self) -> list[list[float]]:
        """
        4x4 row-major nested list, for JSON.
        """
        return self.matrix.tolist()

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def apply_transform(transform: RigidTransform, point: t.Any) -> np.ndarray:
    return transform.apply(point)


def invert(transform: RigidTransform) -> RigidTransform:
    return transform.inverse()


def compose(first: RigidTransform, second: RigidTransform) -> RigidTransform:
    """
    `first ∘ second`.
    """
    return first.compose(second)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    An immutable (N, 3) array of points, with optional unit normals.
    """

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = as_points(self.points)
        object.__setattr__(self, "points", readonly(pts))
        if self.normals is not None:
            nrm = as_points(self.normals, name="normals")
            if nrm.shape != pts.shape:
                raise ValueError(
                    f"normals shape {nrm.shape} does not match points shape {pts.shape}"
                )
            if len(nrm) and np.abs(np.linalg.norm(nrm, axis=1) - 1.0).max() > NORMAL_TOL:
                raise ValueError("normals must have unit norm")
            object.__setattr__(self, "normals", readonly(nrm))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def with_normals(self, normals: t.Any) -> "PointCloud":
        return PointCloud(self.points, normals)

    def transformed(self, transform: RigidTransform) -> "PointCloud":
        normals = None if self.normals is None else self.normals @ transform.rotation.T
        return PointCloud(transform.apply(self.points), normals)

    def select(self, indices: t.Any) -> "PointCloud":
        normals = None if self.normals is None else self.normals[indices]
        return PointCloud(self.points[indices], normals)

    def centroid(self) -> np.ndarray:
        if not len(self):
            raise EmptyCloud("the centroid of an empty cloud is undefined")
        return self.points.mean(axis=0)


class Provenance(IntEnum):
    VISUAL = 0
    GEOMETRIC = 1


@dataclass(frozen=True, eq=False)
class Correspondence:
    src: np.ndarray
    dst: np.ndarray
    weight: float
    provenance: Provenance


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """
    Ordered correspondences stored column-wise.

    `src_index` / `dst_index` point back into the clouds the points were
    taken from (-1 when unknown, e.g. for lifted visual matches).
    """

    src: np.ndarray
    dst: np.ndarray
    weights: np.ndarray
    provenance: np.ndarray
    src_index: np.ndarray
    dst_index: np.ndarray

    def __post_init__(self) -> None:
        src = as_points(self.src, name="src")
        dst = as_points(self.dst, name="dst")
        n = len(src)
        if len(dst) != n:
            raise ValueError(f"src and dst lengths differ: {n} != {len(dst)}")
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        if weights.shape != (n,):
            raise ValueError(f"expected {n} weights, got {weights.shape}")
        if not np.isfinite(weights).all() or (weights < 0).any():
            raise ValueError("weights must be finite and non-negative")
        prov = np.array(self.provenance, dtype=np.int8).reshape(-1)
        src_index = np.array(self.src_index, dtype=np.int64).reshape(-1)
        dst_index = np.array(self.dst_index, dtype=np.int64).reshape(-1)
        if prov.shape != (n,) or src_index.shape != (n,) or dst_index.shape != (n,):
            raise ValueError("provenance and index columns must match the set length")

        object.__setattr__(self, "src", readonly(src))
        object.__setattr__(self, "dst", readonly(dst))
        object.__setattr__(self, "weights", readonly(weights))
        object.__setattr__(self, "provenance", readonly(prov))
        object.__setattr__(self, "src_index", readonly(src_index))
        object.__setattr__(self, "dst_index", readonly(dst_index))

    @classmethod
    def from_arrays(
        cls,
        src: t.Any,
        dst: t.Any,
        weights: t.Any = None,
        *,
        provenance: Provenance | t.Any = Provenance.VISUAL,
        src_index: t.Any = None,
        dst_index: t.Any = None,
    ) -> "CorrespondenceSet":
        src = as_points(src, name="src")
        n = len(src)
        if weights is None:
            weights = np.ones(n)
        if np.ndim(provenance) == 0:
            provenance = np.full(n, int(provenance), dtype=np.int8)
        if src_index is None:
            src_index = np.full(n, -1, dtype=np.int64)
        if dst_index is None:
            dst_index = np.full(n, -1, dtype=np.int64)
        return cls(src, dst, weights, provenance, src_index, dst_index)

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        return cls.from_arrays(np.empty((0, 3)), np.empty((0, 3)))

    @classmethod
    def concatenate(cls, *sets: "CorrespondenceSet") -> "CorrespondenceSet":
        if not sets:
            return cls.empty()
        return cls(
            np.concatenate([s.src for s in sets]),
            np.concatenate([s.dst for s in sets]),
            np.concatenate([s.weights for s in sets]),
            np.concatenate([s.provenance for s in sets]),
            np.concatenate([s.src_index for s in sets]),
            np.concatenate([s.dst_index for s in sets]),
        )

    def __len__(self) -> int:
        return len(self.src)

    def __getitem__(self, i: int) -> Correspondence:
        return Correspondence(
            src=self.src[i],
            dst=self.dst[i],
            weight=float(self.weights[i]),
            provenance=Provenance(int(self.provenance[i])),
        )

    def __iter__(self) -> t.Iterator[Correspondence]:
        for i in range(len(self)):
            yield self[i]

    def select(self, which: t.Any) -> "CorrespondenceSet":
        """
        Subset by index array or boolean mask, preserving order.
        """
        return CorrespondenceSet(
            self.src[which],
            self.dst[which],
            self.weights[which],
            self.provenance[which],
            self.src_index[which],
            self.dst_index[which],
        )

    def with_weights(self, weights: t.Any) -> "CorrespondenceSet":
        return CorrespondenceSet(
            self.src, self.dst, weights, self.provenance, self.src_index, self.dst_index
        )

    def with_uniform_weights(self) -> "CorrespondenceSet":
        return self.with_weights(np.ones(len(self)))

    def residuals(self, transform: RigidTransform) -> np.ndarray:
        """
        `‖T(src_i) - dst_i‖₂` for every correspondence.
        """
        if not len(self):
            return np.empty(0)
        return np.linalg.norm(transform.apply(self.src) - self.dst, axis=1)

    def count(self, provenance: Provenance) -> int:
        return int((self.provenance == int(provenance)).sum())


def fit_weighted(correspondences: CorrespondenceSet) -> RigidTransform:
    """
    Weighted least-squares rigid fit (Kabsch/Umeyama without scale):
    the minimizer of `Σ w_i ‖R·src_i + t - dst_i‖²`.

    Raises `DegenerateInput` for fewer than 3 correspondences, zero total
    weight, or (weighted) collinear source points.
    """
    n = len(correspondences)
    if n < 3:
        raise DegenerateInput(f"need at least 3 correspondences, got {n}")
    weights = correspondences.weights
    total = weights.sum()
    if not total > 0:
        raise DegenerateInput("total correspondence weight is zero")

    w = weights / total
    src, dst = correspondences.src, correspondences.dst
    src_mean = w @ src
    dst_mean = w @ dst
    src_c = src - src_mean
    dst_c = dst - dst_mean

    cross = (src_c * w[:, None]).T @ dst_c
    u, s, vt = np.linalg.svd(cross)
    if s[0] <= 0 or s[1] < COLLINEAR_RATIO * s[0]:
        raise DegenerateInput("correspondences are collinear")

    # Reflection correction.
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, dst_mean - rot @ src_mean)


def rotation_error(estimate: RigidTransform, truth: RigidTransform) -> float:
    """
    Angle, in degrees, of the relative rotation between both transforms.
    """
    rel = estimate.rotation.T @ truth.rotation
    cos = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    axis = np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    sin = np.linalg.norm(axis) / 2.0
    return float(np.degrees(np.arctan2(sin, cos)))


def translation_error(estimate: RigidTransform, truth: RigidTransform) -> float:
    """
    Euclidean distance, in meters, between both translations.
    """
    return float(np.linalg.norm(estimate.translation - truth.translation))


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """
    Replaces the points in each occupied voxel cell by their centroid.

    Cells are aligned to the origin; the output is ordered by cell key.
    Normals are not carried over: estimate them again on the result.
    """
    if not voxel > 0:
        raise InvalidVoxel(f"voxel size must be positive, got {voxel}")
    if not len(cloud):
        return PointCloud(np.empty((0, 3)))

    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, cloud.points)
    logger.debug("voxel %s: %d -> %d points", voxel, len(cloud), len(counts))
    return PointCloud(sums / counts[:, None])
