import math

import numpy as np
import pytest

from vigg import DimMismatch, InvalidConfig, MissingNormals
from vigg.features import (
    DescriptorParams,
    FeatureSet,
    compute_descriptor,
    describe,
    estimate_normals,
    global_feature_match,
)
from vigg.geometry import PointCloud, Provenance, RigidTransform
from vigg.spatial import SpatialIndex3

from .data import plane_cloud, random_points, sphere_cloud


def naive_pair(ps, ns, pt, nt):
    dp = pt - ps
    d = np.linalg.norm(dp)
    if d == 0:
        return 0.0, 0.0, 0.0
    a1 = float(ns @ dp) / d
    a2 = float(nt @ dp) / d
    if math.acos(min(1.0, abs(a1))) > math.acos(min(1.0, abs(a2))):
        n1, n2, dp, f3 = nt, ns, -dp, -a2
    else:
        n1, n2, f3 = ns, nt, a1
    v = np.cross(dp, n1)
    if np.linalg.norm(v) == 0:
        return 0.0, 0.0, 0.0
    v = v / np.linalg.norm(v)
    w = np.cross(n1, v)
    return math.atan2(w @ n2, n1 @ n2), float(v @ n2), f3


def naive_bins(f1, f2, f3, nb):
    def clamp(b):
        return min(max(b, 0), nb - 1)

    return (
        clamp(math.floor(nb * (f1 + math.pi) / (2 * math.pi))),
        nb + clamp(math.floor(nb * (f2 + 1) * 0.5)),
        2 * nb + clamp(math.floor(nb * (f3 + 1) * 0.5)),
    )


def naive_descriptor(cloud, radius, nb=11):
    pts, nrm = cloud.points, cloud.normals
    n = len(pts)
    neighbors = []
    for i in range(n):
        row = []
        for j in range(n):
            if i != j and ((pts[i] - pts[j]) ** 2).sum() <= radius * radius:
                row.append(j)
        neighbors.append(row)

    spfh = np.zeros((n, 3 * nb))
    for i in range(n):
        for j in neighbors[i]:
            for b in naive_bins(*naive_pair(pts[i], nrm[i], pts[j], nrm[j]), nb):
                spfh[i, b] += 100.0 / len(neighbors[i])

    fpfh = spfh.copy()
    for i in range(n):
        if not neighbors[i]:
            continue
        acc = np.zeros(3 * nb)
        for j in neighbors[i]:
            d = np.linalg.norm(pts[i] - pts[j])
            if d > 0:
                acc += spfh[j] / d
        fpfh[i] += acc / len(neighbors[i])

    for i in range(n):
        for block in range(3):
            part = fpfh[i, block * nb:(block + 1) * nb]
            total = part.sum()
            if total > 0:
                fpfh[i, block * nb:(block + 1) * nb] = 100.0 * part / total
    return fpfh


def test_plane_normals():
    cloud = estimate_normals(plane_cloud(), 0.25)
    np.testing.assert_allclose(np.abs(cloud.normals[:, 2]), 1.0, atol=1e-6)


def test_sphere_normals_point_outward():
    cloud = estimate_normals(sphere_cloud(), 0.15)
    cos = np.einsum("ij,ij->i", cloud.normals, cloud.points)
    assert cos.min() >= math.cos(math.radians(5.0))


def test_normals_match_covariance_eigenvectors():
    rng = np.random.default_rng(3)
    pts = rng.random((400, 3)) * [1.0, 1.0, 0.2]
    cloud = estimate_normals(PointCloud(pts), 0.3)
    index = SpatialIndex3(pts)
    checked = 0
    for i, p in enumerate(pts):
        nb = pts[index.radius_query(p, 0.3)]
        assert len(nb) >= 3
        vals, vecs = np.linalg.eigh(np.cov(nb.T, bias=True))
        if vals[1] < 1.01 * vals[0]:
            continue
        assert abs(vecs[:, 0] @ cloud.normals[i]) == pytest.approx(1.0, abs=1e-6)
        checked += 1
    assert checked > 300


def test_isolated_point_has_zero_descriptor():
    cloud = PointCloud([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]], [[0.0, 0.0, 1.0]] * 2)
    features = compute_descriptor(cloud, DescriptorParams(0.5, 1.0))
    assert features.dim == 33
    assert not features.vectors.any()


def test_descriptor_blocks_sum_to_100():
    cloud = estimate_normals(sphere_cloud(500), 0.3)
    features = compute_descriptor(cloud, DescriptorParams(0.3, 0.6)).vectors
    sums = features.reshape(len(features), 3, 11).sum(axis=2)
    np.testing.assert_allclose(sums, 100.0, atol=1e-3)


def test_descriptor_matches_naive_histograms():
    rng = np.random.default_rng(8)
    pts = rng.random((20, 3))
    normals = rng.normal(size=(20, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    cloud = PointCloud(pts, normals)
    got = compute_descriptor(cloud, DescriptorParams(0.3, 0.6)).vectors
    np.testing.assert_allclose(got, naive_descriptor(cloud, 0.6), atol=1e-3)


def test_descriptor_is_rotation_invariant():
    cloud = estimate_normals(sphere_cloud(800), 0.25)
    params = DescriptorParams(0.25, 0.5)
    moved = cloud.transformed(RigidTransform.random(4, max_translation=3.0))
    np.testing.assert_allclose(
        compute_descriptor(moved, params).vectors,
        compute_descriptor(cloud, params).vectors,
        atol=1e-4,
    )


def test_describe_estimates_missing_normals():
    cloud, features = describe(plane_cloud(), DescriptorParams.for_voxel(0.05))
    assert cloud.has_normals
    assert len(features) == 100


def test_descriptor_params():
    params = DescriptorParams.for_voxel(0.025)
    assert params.normal_radius == pytest.approx(0.05)
    assert params.feature_radius == pytest.approx(0.125)
    assert params.dim == 33
    with pytest.raises(InvalidConfig):
        DescriptorParams(0.5, 0.1)
    with pytest.raises(MissingNormals):
        compute_descriptor(plane_cloud(), params)


def test_global_match_self():
    cloud = PointCloud(random_points(100, seed=1))
    features = FeatureSet(np.random.default_rng(1).random((100, 33)))
    c = global_feature_match(features, features, cloud, cloud, None)
    assert c.src_index.tolist() == list(range(100))
    assert c.dst_index.tolist() == list(range(100))
    assert (c.weights == 1.0).all()
    assert c.count(Provenance.GEOMETRIC) == 100


def test_global_match_one_hot_permutation():
    n = 40
    perm = np.random.default_rng(2).permutation(n)
    cloud = PointCloud(random_points(n, seed=2))
    fp = FeatureSet(np.eye(n))
    fq = FeatureSet(np.eye(n)[perm])
    c = global_feature_match(fp, fq, cloud, cloud, None)
    assert c.dst_index.tolist() == np.argsort(perm).tolist()


def test_global_match_matches_scan():
    rng = np.random.default_rng(9)
    fp = FeatureSet(rng.random((200, 33)))
    fq = FeatureSet(rng.random((300, 33)))
    p = PointCloud(random_points(200, seed=3))
    q = PointCloud(random_points(300, seed=4))
    c = global_feature_match(fp, fq, p, q, None)
    a = fp.vectors.astype(np.float64)
    b = fq.vectors.astype(np.float64)
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    assert c.dst_index.tolist() == d.argmin(axis=1).tolist()
    np.testing.assert_array_equal(c.dst, q.points[c.dst_index])


def test_global_match_sampling():
    rng = np.random.default_rng(10)
    fp = FeatureSet(rng.random((500, 8)))
    cloud = PointCloud(random_points(500, seed=5))
    c = global_feature_match(fp, fp, cloud, cloud, 50, seed=3)
    assert len(c) == 50
    assert (np.diff(c.src_index) > 0).all()
    again = global_feature_match(fp, fp, cloud, cloud, 50, seed=3)
    assert c.src_index.tolist() == again.src_index.tolist()


def test_global_match_errors():
    cloud = PointCloud(random_points(4))
    with pytest.raises(DimMismatch):
        global_feature_match(
            FeatureSet(np.zeros((4, 3))), FeatureSet(np.zeros((4, 5))), cloud, cloud, None
        )
    with pytest.raises(DimMismatch):
        global_feature_match(
            FeatureSet(np.zeros((3, 3))), FeatureSet(np.zeros((4, 3))), cloud, cloud, None
        )
