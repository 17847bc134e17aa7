"""
vigg | Copyright (c) The vigg developers

Lifting of image-space matches to 3D correspondences, either through a depth
image (RGB-D) or through a point cloud projected onto the image plane
(camera-LiDAR).
"""
import typing as t
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidIntrinsics, OutOfBounds
from .geometry import CorrespondenceSet, PointCloud, Provenance, RigidTransform
from .utils import logger, readonly


DEFAULT_MAX_RESIDUAL = 2.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidIntrinsics(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise InvalidIntrinsics(f"invalid image size {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidIntrinsics(
                f"principal point ({self.cx}, {self.cy}) outside a {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    def project(self, points: t.Any) -> np.ndarray:
        """
        Pinhole projection of camera-frame points (N, 3) to pixels (N, 2).
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.stack([
            self.fx * pts[:, 0] / pts[:, 2] + self.cx,
            self.fy * pts[:, 1] / pts[:, 2] + self.cy,
        ], axis=1)

    def contains(self, u: float, v: float) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height


@dataclass(frozen=True, eq=False)
class DepthImage:
    """
    Row-major depth in meters. Zero or NaN marks an invalid pixel.
    """

    depth: np.ndarray

    def __post_init__(self) -> None:
        d = np.array(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"depth must be a 2D array, got shape {d.shape}")
        object.__setattr__(self, "depth", readonly(d))

    @property
    def height(self) -> int:
        return int(self.depth.shape[0])

    @property
    def width(self) -> int:
        return int(self.depth.shape[1])


@dataclass(frozen=True)
class PixelMatch:
    u1: float
    v1: float
    u2: float
    v2: float
    score: float = 1.0


@dataclass(frozen=True, eq=False)
class ProjectionMap:
    """
    Per pixel, the index of the nearest projected cloud point (-1 if none)
    and the distance in pixels between the pixel center and that projection.
    """

    index: np.ndarray
    residual: np.ndarray
    max_residual: float = DEFAULT_MAX_RESIDUAL

    @property
    def height(self) -> int:
        return int(self.index.shape[0])

    @property
    def width(self) -> int:
        return int(self.index.shape[1])


def _pixel(u: float, v: float, width: int, height: int) -> tuple[int, int]:
    if not (0 <= u < width and 0 <= v < height):
        raise OutOfBounds(f"pixel ({u}, {v}) outside a {width}x{height} image")
    col = min(int(np.floor(u + 0.5)), width - 1)
    row = min(int(np.floor(v + 0.5)), height - 1)
    return col, row


def backproject(
    pixel: tuple[float, float], depth: DepthImage, k: CameraIntrinsics
) -> np.ndarray | None:
    """
    3D point, in the camera frame, of a (sub)pixel. The depth is read at the
    nearest integer pixel; `None` when that depth is invalid.
    """
    u, v = pixel
    col, row = _pixel(u, v, depth.width, depth.height)
    d = depth.depth[row, col]
    if not (np.isfinite(d) and d > 0):
        return None
    return np.array([(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d])


def build_projection_map(
    cloud: PointCloud,
    extrinsic: RigidTransform,
    k: CameraIntrinsics,
    *,
    max_residual: float = DEFAULT_MAX_RESIDUAL,
) -> ProjectionMap:
    """
    Projects the cloud (taken to the camera frame by `extrinsic`) onto the
    image and assigns each pixel the projected point closest to its center,
    within `max_residual` pixels.

    Points behind the camera or outside the image are dropped. Equal
    residuals go to the point closest to the camera, then to the lowest index.
    """
    index = np.full((k.height, k.width), -1, dtype=np.int64)
    residual = np.full((k.height, k.width), np.inf)

    cam = extrinsic.apply(cloud.points) if len(cloud) else np.empty((0, 3))
    ids = np.nonzero(cam[:, 2] > 0)[0]
    if len(ids):
        uv = k.project(cam[ids])
        inside = (uv[:, 0] >= 0) & (uv[:, 0] < k.width) & (uv[:, 1] >= 0) & (uv[:, 1] < k.height)
        ids, uv = ids[inside], uv[inside]
    else:
        uv = np.empty((0, 2))

    if len(ids):
        reach = int(np.ceil(max_residual))
        offsets = np.arange(-reach, reach + 1)
        du, dv = np.meshgrid(offsets, offsets, indexing="xy")
        du, dv = du.ravel(), dv.ravel()

        base_u = np.floor(uv[:, 0] + 0.5).astype(np.int64)
        base_v = np.floor(uv[:, 1] + 0.5).astype(np.int64)
        cols = (base_u[:, None] + du[None, :]).ravel()
        rows = (base_v[:, None] + dv[None, :]).ravel()
        owner = np.repeat(np.arange(len(ids)), len(du))
        res = np.hypot(cols - uv[owner, 0], rows - uv[owner, 1])
        ok = (res <= max_residual) & (cols >= 0) & (cols < k.width) & (rows >= 0) & (rows < k.height)
        cols, rows, owner, res = cols[ok], rows[ok], owner[ok], res[ok]

        pix = rows * k.width + cols
        point = ids[owner]
        depth = cam[point, 2]
        order = np.lexsort((point, depth, res, pix))
        pix_sorted = pix[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        win = order[first]
        index.reshape(-1)[pix[win]] = point[win]
        residual.reshape(-1)[pix[win]] = res[win]

    logger.debug(
        "projection map: %d of %d points in view, %d pixels mapped",
        len(ids), len(cloud), int((index >= 0).sum()),
    )
    return ProjectionMap(readonly(index), readonly(residual), max_residual)


class LiftSource(t.Protocol):
    def lift(self, u: float, v: float) -> np.ndarray | None: ...


@dataclass(frozen=True, eq=False)
class DepthLifter:
    """
    Lifts pixels through a depth image. Points come out in the frame of
    the cloud: camera frame mapped by the inverse of `extrinsic`.
    """

    depth: DepthImage
    intrinsics: CameraIntrinsics
    extrinsic: RigidTransform | None = None

    def lift(self, u: float, v: float) -> np.ndarray | None:
        point = backproject((u, v), self.depth, self.intrinsics)
        if point is None or self.extrinsic is None:
            return point
        return self.extrinsic.inverse().apply(point)


@dataclass(frozen=True, eq=False)
class ProjectionLifter:
    """
    Lifts pixels to the cloud point mapped at their nearest integer pixel.
    """

    projection: ProjectionMap
    cloud: PointCloud

    def lift(self, u: float, v: float) -> np.ndarray | None:
        col, row = _pixel(u, v, self.projection.width, self.projection.height)
        i = self.projection.index[row, col]
        if i < 0:
            return None
        return self.cloud.points[i].copy()


def _try_lift(source: LiftSource, u: float, v: float) -> np.ndarray | None:
    try:
        return source.lift(u, v)
    except OutOfBounds:
        return None


def lift_matches(
    matches: t.Iterable[PixelMatch], source1: LiftSource, source2: LiftSource
) -> CorrespondenceSet:
    """
    Visual correspondences from the pixel matches whose both endpoints lift.
    Weights are the match scores; input order is kept.
    """
    src, dst, scores = [], [], []
    total = 0
    for m in matches:
        total += 1
        a = _try_lift(source1, m.u1, m.v1)
        if a is None:
            continue
        b = _try_lift(source2, m.u2, m.v2)
        if b is None:
            continue
        src.append(a)
        dst.append(b)
        scores.append(m.score)

    logger.debug("lifted %d of %d pixel matches", len(src), total)
    if not src:
        return CorrespondenceSet.empty()
    return CorrespondenceSet.from_arrays(
        np.array(src), np.array(dst), np.clip(scores, 0.0, None), provenance=Provenance.VISUAL
    )
