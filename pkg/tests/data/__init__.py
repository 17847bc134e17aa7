import functools

import numpy as np
from scipy.spatial.transform import Rotation

from vigg.geometry import CorrespondenceSet, PointCloud, RigidTransform
from vigg.synth import SceneSpec, generate_scene


def random_points(n: int, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-scale, scale, size=(n, 3))


def exact_pairs(transform: RigidTransform, n: int, seed: int = 0) -> CorrespondenceSet:
    src = random_points(n, seed)
    return CorrespondenceSet.from_arrays(src, transform.apply(src))


def plane_cloud(side: int = 10, spacing: float = 0.1) -> PointCloud:
    xs, ys = np.meshgrid(np.arange(side) * spacing, np.arange(side) * spacing)
    return PointCloud(np.column_stack([xs.ravel(), ys.ravel(), np.zeros(side * side)]))


def sphere_cloud(n: int = 2000) -> PointCloud:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5**0.5) * i
    pts = np.column_stack([
        np.cos(theta) * np.sin(phi),
        np.sin(theta) * np.sin(phi),
        np.cos(phi),
    ])
    return PointCloud(pts)


SMALL_SCENE = SceneSpec(point_count=1500, extent=3.0, visual_match_count=60, box_count=3)


@functools.cache
def small_scene(**changes):
    """
    A synthetic room small enough for unit tests. Cached: scenes are immutable.
    """
    return generate_scene(SMALL_SCENE.replace(**changes))


def horn_fit(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """
    Closed-form quaternion solution of the unweighted absolute orientation
    problem, independent of the SVD fit.
    """
    a = src - src.mean(axis=0)
    b = dst - dst.mean(axis=0)
    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = a.T @ b
    n = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    _, vecs = np.linalg.eigh(n)
    w, x, y, z = vecs[:, -1]
    rot = Rotation.from_quat([x, y, z, w]).as_matrix()
    return RigidTransform(rot, dst.mean(axis=0) - rot @ src.mean(axis=0))
