"""
vigg | Copyright (c) The vigg developers

Synthetic registration pairs: a furnished room sampled on jittered grids,
a partially overlapping second view under a random rigid motion, and
visual matches corrupted with controlled noise, outliers and a rigid cluster
of false matches.
"""
import dataclasses
import typing as t
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import InvalidSpec
from .features import DescriptorParams, FeatureSet, compute_descriptor
from .formats import write_features, write_matches, write_ply, write_truth
from .geometry import CorrespondenceSet, PointCloud, Provenance, RigidTransform
from .utils import logger, make_rng


GRID_JITTER = 0.15
HEIGHT_RATIO = 0.6
BOX_SLOTS = 3


@dataclass(frozen=True, eq=False)
class AmbiguityCluster:
    """
    `size` false visual matches, all consistent with `offset ∘ T` instead of
    the true motion `T`.
    """

    size: int = 6
    offset: RigidTransform = dataclasses.field(
        default_factory=lambda: RigidTransform(np.eye(3), [-3.0, 0.0, 0.0])
    )

    def to_dict(self) -> dict[str, t.Any]:
        return {"size": self.size, "offset": self.offset.as_list()}


@dataclass(frozen=True, eq=False)
class SceneSpec:
    point_count: int = 5000
    extent: float = 4.0
    overlap_fraction: float = 0.7
    visual_match_count: int = 150
    visual_inlier_ratio: float = 0.7
    match_noise_sigma: float = 0.0
    ambiguity_cluster: AmbiguityCluster | None = None
    feature_noise_sigma: float = 0.0
    point_jitter: float = 0.0
    # None draws the rotation uniformly over SO(3).
    max_rotation_deg: float | None = None
    box_count: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.point_count < 100:
            raise InvalidSpec(f"point_count must be >= 100, got {self.point_count}")
        if not self.extent > 0:
            raise InvalidSpec(f"extent must be positive, got {self.extent}")
        if not (0 < self.overlap_fraction <= 1):
            raise InvalidSpec(f"overlap_fraction must be in (0, 1], got {self.overlap_fraction}")
        if self.visual_match_count < 1:
            raise InvalidSpec(f"visual_match_count must be positive, got {self.visual_match_count}")
        if not (0 <= self.visual_inlier_ratio <= 1):
            raise InvalidSpec(f"visual_inlier_ratio must be in [0, 1], got {self.visual_inlier_ratio}")
        for name in ("match_noise_sigma", "feature_noise_sigma", "point_jitter"):
            if not getattr(self, name) >= 0:
                raise InvalidSpec(f"{name} must be >= 0, got {getattr(self, name)}")
        if not (0 <= self.box_count <= BOX_SLOTS * BOX_SLOTS):
            raise InvalidSpec(f"box_count must be within 0..{BOX_SLOTS * BOX_SLOTS}")
        cluster = self.ambiguity_cluster
        if cluster is not None:
            if cluster.size < 1:
                raise InvalidSpec("an ambiguity cluster needs at least one match")
            if cluster.size > self.visual_match_count - self.inlier_count:
                raise InvalidSpec(
                    f"an ambiguity cluster of {cluster.size} does not fit in the "
                    f"{self.visual_match_count - self.inlier_count} outlier matches"
                )
        if not (0 <= self.seed < 2**64):
            raise InvalidSpec(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def inlier_count(self) -> int:
        return int(round(self.visual_match_count * self.visual_inlier_ratio))

    def replace(self, **changes: t.Any) -> "SceneSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, t.Any]:
        data = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        cluster = self.ambiguity_cluster
        data["ambiguity_cluster"] = None if cluster is None else cluster.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict[str, t.Any]) -> "SceneSpec":
        data = dict(data)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise InvalidSpec(f"unknown scene keys: {', '.join(unknown)}")
        cluster = data.get("ambiguity_cluster")
        if isinstance(cluster, dict):
            offset = cluster.get("offset")
            data["ambiguity_cluster"] = AmbiguityCluster(
                size=int(cluster.get("size", 6)),
                **({"offset": RigidTransform.from_matrix(offset)} if offset is not None else {}),
            )
        return cls(**data)


@dataclass(frozen=True, eq=False)
class Scene:
    """
    One generated pair. Unpacks as `(p, q, fp, fq, c_vis, truth)`.

    `counterpart[i]` is the index in Q of P's point i (-1 outside the
    overlap); `inlier_mask` / `cluster_mask` label the visual matches.
    """

    p: PointCloud
    q: PointCloud
    fp: FeatureSet
    fq: FeatureSet
    c_vis: CorrespondenceSet
    truth: RigidTransform
    spec: SceneSpec
    spacing: float
    counterpart: np.ndarray
    inlier_mask: np.ndarray
    cluster_mask: np.ndarray

    def __iter__(self) -> t.Iterator[t.Any]:
        return iter((self.p, self.q, self.fp, self.fq, self.c_vis, self.truth))

    @property
    def descriptor_params(self) -> DescriptorParams:
        return DescriptorParams(normal_radius=2.0 * self.spacing, feature_radius=5.0 * self.spacing)


@dataclass(frozen=True)
class _Box:
    center: np.ndarray
    size: np.ndarray
    yaw: float

    @property
    def rotation(self) -> np.ndarray:
        return Rotation.from_euler("z", self.yaw).as_matrix()

    def contains_xy(self, points: np.ndarray) -> np.ndarray:
        local = (points[:, :2] - self.center[:2]) @ self.rotation[:2, :2]
        return (np.abs(local) <= self.size[:2] / 2).all(axis=1)


def _grid(
    rng: np.random.Generator,
    origin: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    width: float,
    height: float,
    spacing: float,
    normal: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Points on the rectangle `origin + a·u + b·v`, one per grid cell, jittered
    within the cell and kept half a cell away from the borders.
    """
    nu, nv = int(width // spacing), int(height // spacing)
    if nu < 1 or nv < 1:
        return np.empty((0, 3)), np.empty((0, 3))
    a, b = np.meshgrid(np.arange(nu) + 0.5, np.arange(nv) + 0.5, indexing="ij")
    a = a.ravel() + rng.uniform(-GRID_JITTER, GRID_JITTER, a.size)
    b = b.ravel() + rng.uniform(-GRID_JITTER, GRID_JITTER, b.size)
    # Center the grid inside the rectangle.
    a = a * spacing + (width - nu * spacing) / 2
    b = b * spacing + (height - nv * spacing) / 2
    points = origin + a[:, None] * u + b[:, None] * v
    return points, np.repeat(normal[None, :], len(points), axis=0)


def _boxes(rng: np.random.Generator, extent: float, height: float, count: int) -> list[_Box]:
    cell = extent / BOX_SLOTS
    slots = rng.choice(BOX_SLOTS * BOX_SLOTS, size=count, replace=False)
    boxes = []
    for slot in sorted(int(s) for s in slots):
        row, col = divmod(slot, BOX_SLOTS)
        size = np.array([
            rng.uniform(0.3, 0.5) * cell,
            rng.uniform(0.3, 0.5) * cell,
            rng.uniform(0.15, 0.5) * height,
        ])
        center = np.array([
            -extent / 2 + (col + 0.5) * cell + rng.uniform(-0.1, 0.1) * cell,
            -extent / 2 + (row + 0.5) * cell + rng.uniform(-0.1, 0.1) * cell,
            size[2] / 2,
        ])
        boxes.append(_Box(center, size, float(rng.uniform(0.0, np.pi / 2))))
    return boxes


def _room(
    rng: np.random.Generator, extent: float, spacing: float, boxes: list[_Box]
) -> tuple[np.ndarray, np.ndarray]:
    """
    Floor, four walls (no ceiling) and the boxes, with inward/outward normals.
    """
    half = extent / 2
    height = HEIGHT_RATIO * extent
    ex, ey, ez = np.eye(3)
    parts = [
        _grid(rng, np.array([-half, -half, 0.0]), ex, ey, extent, extent, spacing, ez),
        _grid(rng, np.array([-half, -half, 0.0]), ex, ez, extent, height, spacing, ey),
        _grid(rng, np.array([-half, half, 0.0]), ex, ez, extent, height, spacing, -ey),
        _grid(rng, np.array([-half, -half, 0.0]), ey, ez, extent, height, spacing, ex),
        _grid(rng, np.array([half, -half, 0.0]), ey, ez, extent, height, spacing, -ex),
    ]
    floor_pts, floor_nrm = parts[0]
    covered = np.zeros(len(floor_pts), dtype=bool)
    for box in boxes:
        covered |= box.contains_xy(floor_pts)
    parts[0] = (floor_pts[~covered], floor_nrm[~covered])

    for box in boxes:
        rot = box.rotation
        bx, by = rot[:, 0], rot[:, 1]
        w, d, h = box.size
        corner = box.center - bx * w / 2 - by * d / 2 - ez * h / 2
        parts += [
            _grid(rng, corner + ez * h, bx, by, w, d, spacing, ez),
            _grid(rng, corner, bx, ez, w, h, spacing, -by),
            _grid(rng, corner + by * d, bx, ez, w, h, spacing, by),
            _grid(rng, corner, by, ez, d, h, spacing, -bx),
            _grid(rng, corner + bx * w, by, ez, d, h, spacing, bx),
        ]
    points = np.concatenate([pts for pts, _ in parts])
    normals = np.concatenate([nrm for _, nrm in parts])
    return points, normals


def _surface_area(extent: float, boxes: list[_Box]) -> float:
    height = HEIGHT_RATIO * extent
    area = extent * extent + 4 * extent * height
    for w, d, h in (box.size for box in boxes):
        area += 2 * (w + d) * h
    return area


def _sample_room(
    rng: np.random.Generator, spec: SceneSpec, count: int
) -> tuple[np.ndarray, np.ndarray, float]:
    """
    Exactly `count` room points: grid-sample slightly densely, then
    subsample without replacement.
    """
    boxes = _boxes(rng, spec.extent, HEIGHT_RATIO * spec.extent, spec.box_count)
    spacing = float(np.sqrt(_surface_area(spec.extent, boxes) / (1.15 * count)))
    while True:
        points, normals = _room(rng, spec.extent, spacing, boxes)
        if len(points) >= count:
            break
        spacing *= 0.95
    keep = np.sort(rng.choice(len(points), size=count, replace=False))
    return points[keep], normals[keep], spacing


def generate_scene(spec: SceneSpec) -> Scene:
    """
    Builds a registration pair from `spec`, bit-identical for a given seed.

    P is a furnished room. Q holds the `overlap_fraction` of P lying on one
    side of a random vertical cut, moved by the ground truth `T` and
    jittered, plus points of an adjoining room that P never sees.
    Visual matches: `round(M · inlier_ratio)` true pairs, the ambiguity
    cluster, then random pairs; every target gets `N(0, σ²I)` noise.
    Every random draw happens whatever the noise levels, so scenes that
    differ only in noise share everything else.
    """
    rng = make_rng(spec.seed)
    n = spec.point_count
    world, normals, spacing = _sample_room(rng, spec, n)

    heading = rng.uniform(0.0, 2 * np.pi)
    direction = np.array([np.cos(heading), np.sin(heading), 0.0])
    n_overlap = int(round(n * spec.overlap_fraction))
    order = np.argsort(world @ direction, kind="stable")
    overlap = np.sort(order[:n_overlap])

    # The adjoining room sits one room length away along the dominant axis of
    # the cut direction, separated from P's room by a gap of one grid cell.
    axis = int(np.abs(direction[:2]).argmax())
    shift = np.zeros(3)
    shift[axis] = np.sign(direction[axis]) * (spec.extent + spacing)
    other, other_normals, _ = _sample_room(rng, spec, n)
    extra = np.sort(rng.choice(n, size=n - n_overlap, replace=False))

    truth = RigidTransform.random(
        rng, max_translation=spec.extent / 2, max_degrees=spec.max_rotation_deg
    )
    jitter = rng.standard_normal((n_overlap, 3)) * spec.point_jitter
    q_world = np.concatenate([world[overlap] + jitter, other[extra] + shift])
    q_normals = np.concatenate([normals[overlap], other_normals[extra]])
    perm = rng.permutation(len(q_world))
    q_world, q_normals = q_world[perm], q_normals[perm]

    counterpart = np.full(n, -1, dtype=np.int64)
    position = np.empty(len(perm), dtype=np.int64)
    position[perm] = np.arange(len(perm))
    counterpart[overlap] = position[:n_overlap]

    p = PointCloud(world, normals)
    q = PointCloud(q_world, q_normals).transformed(truth)
    params = DescriptorParams(normal_radius=2.0 * spacing, feature_radius=5.0 * spacing)
    fp = compute_descriptor(p, params)
    fq = compute_descriptor(q, params)
    fp = FeatureSet(fp.vectors + spec.feature_noise_sigma * rng.standard_normal(fp.vectors.shape))
    fq = FeatureSet(fq.vectors + spec.feature_noise_sigma * rng.standard_normal(fq.vectors.shape))

    c_vis, inlier_mask, cluster_mask = _visual_matches(rng, spec, p, q, truth, overlap, counterpart)
    logger.debug(
        "scene seed %d: |P| %d, |Q| %d, spacing %.4f, %d visual matches",
        spec.seed, len(p), len(q), spacing, len(c_vis),
    )
    return Scene(
        p=p, q=q, fp=fp, fq=fq, c_vis=c_vis, truth=truth, spec=spec, spacing=spacing,
        counterpart=counterpart, inlier_mask=inlier_mask, cluster_mask=cluster_mask,
    )


def _visual_matches(
    rng: np.random.Generator,
    spec: SceneSpec,
    p: PointCloud,
    q: PointCloud,
    truth: RigidTransform,
    overlap: np.ndarray,
    counterpart: np.ndarray,
) -> tuple[CorrespondenceSet, np.ndarray, np.ndarray]:
    m = spec.visual_match_count
    n_in = spec.inlier_count
    if n_in > len(overlap):
        raise InvalidSpec(f"{n_in} inlier matches requested but only {len(overlap)} points overlap")
    cluster = spec.ambiguity_cluster
    n_cluster = cluster.size if cluster is not None else 0
    n_out = m - n_in - n_cluster

    inliers = rng.choice(overlap, size=n_in, replace=False)
    src = [p.points[inliers]]
    dst = [truth.apply(p.points[inliers])]
    src_index = [inliers]
    dst_index = [counterpart[inliers]]

    # The cluster is the block of P points nearest to a random seed point.
    anchor = p.points[rng.integers(len(p))]
    if n_cluster:
        block = np.argsort(np.linalg.norm(p.points - anchor, axis=1), kind="stable")[:n_cluster]
        src.append(p.points[block])
        dst.append(cluster.offset.apply(truth.apply(p.points[block])))
        src_index.append(block)
        dst_index.append(np.full(n_cluster, -1, dtype=np.int64))

    out_src = rng.integers(len(p), size=n_out)
    out_dst = rng.integers(len(q), size=n_out)
    src.append(p.points[out_src])
    dst.append(q.points[out_dst])
    src_index.append(out_src)
    dst_index.append(out_dst)

    noise = rng.standard_normal((m, 3)) * spec.match_noise_sigma
    shuffle = rng.permutation(m)
    kind = np.concatenate([np.zeros(n_in), np.ones(n_cluster), np.full(n_out, 2)])[shuffle]
    c_vis = CorrespondenceSet.from_arrays(
        np.concatenate(src)[shuffle],
        np.concatenate(dst)[shuffle] + noise,
        provenance=Provenance.VISUAL,
        src_index=np.concatenate(src_index)[shuffle],
        dst_index=np.concatenate(dst_index)[shuffle],
    )
    return c_vis, kind == 0, kind == 1


def make_geometric_matches(
    scene: Scene, count: int, inlier_ratio: float, seed: "int | np.random.Generator | None" = 0
) -> CorrespondenceSet:
    """
    Geometric correspondences with a controlled inlier ratio: true
    counterpart pairs first, then random pairs.
    """
    if count < 0 or not (0 <= inlier_ratio <= 1):
        raise InvalidSpec("count must be >= 0 and inlier_ratio within [0, 1]")
    rng = make_rng(seed)
    overlap = np.nonzero(scene.counterpart >= 0)[0]
    n_in = int(round(count * inlier_ratio))
    if n_in > len(overlap):
        raise InvalidSpec(f"{n_in} inliers requested but only {len(overlap)} points overlap")
    src_in = rng.choice(overlap, size=n_in, replace=False)
    src_out = rng.integers(len(scene.p), size=count - n_in)
    dst_out = rng.integers(len(scene.q), size=count - n_in)
    src_idx = np.concatenate([src_in, src_out]).astype(np.int64)
    dst_idx = np.concatenate([scene.counterpart[src_in], dst_out]).astype(np.int64)
    return CorrespondenceSet.from_arrays(
        scene.p.points[src_idx],
        scene.q.points[dst_idx],
        provenance=Provenance.GEOMETRIC,
        src_index=src_idx,
        dst_index=dst_idx,
    )


def write_bundle(folder: "str | Path", scene: Scene) -> Path:
    """
    Writes cloud_{p,q}.ply, features_{p,q}.vgf, matches.vgm (lifted) and
    truth.json into `folder`.
    """
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    write_ply(folder / "cloud_p.ply", scene.p)
    write_ply(folder / "cloud_q.ply", scene.q)
    write_features(folder / "features_p.vgf", scene.fp)
    write_features(folder / "features_q.vgf", scene.fq)
    write_matches(folder / "matches.vgm", scene.c_vis)
    write_truth(folder / "truth.json", scene.truth, scene.spec.to_dict())
    return folder
