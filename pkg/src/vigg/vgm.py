"""
vigg | Copyright (c) The vigg developers

Geometric matching guided by a prior transform: the residuals of the visual
pseudo-inliers give an isotropic Gaussian error model, whose χ²₃ quantile
bounds a search zone around each prior-mapped source point. Each source
point is then matched, in feature space, only against the target points
inside its zone.
"""
import typing as t
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .exceptions import InvalidConfig, NoCorrespondences
from .features import FeatureSet, check_aligned
from .geometry import CorrespondenceSet, PointCloud, Provenance, RigidTransform
from .spatial import SpatialIndex3
from .utils import logger, make_rng, sample_indices
from .weights import kernel_weights


DEFAULT_GAMMA_SQ = 10.0
DEFAULT_MIN_INLIERS = 3
DEFAULT_MAX_SOURCE_POINTS = 10_000


@dataclass(frozen=True)
class VgmConfig:
    t_inlier: float = 0.10
    sigma_floor: float = (0.25 * 0.025) ** 2
    gamma_sq: float = DEFAULT_GAMMA_SQ
    min_inliers: int = DEFAULT_MIN_INLIERS
    max_source_points: int | None = DEFAULT_MAX_SOURCE_POINTS
    # Fixed zone radius in meters; None uses the error model.
    zone_radius: float | None = None
    bandwidth: float | None = None

    def __post_init__(self) -> None:
        if not (self.t_inlier > 0 and self.sigma_floor > 0 and self.gamma_sq > 0):
            raise InvalidConfig("t_inlier, sigma_floor and gamma_sq must be positive")
        if self.zone_radius is not None and not self.zone_radius > 0:
            raise InvalidConfig(f"zone_radius must be positive, got {self.zone_radius}")
        if self.max_source_points is not None and self.max_source_points < 1:
            raise InvalidConfig("max_source_points must be >= 1")


@dataclass(frozen=True)
class ErrorModel:
    """
    `sigma_sq` is the per-axis residual variance; the search zone has squared
    radius `radius_sq = sigma_sq * gamma_sq`.
    """

    sigma_sq: float
    gamma_sq: float
    inlier_count: int
    fallback: bool = False

    @property
    def radius_sq(self) -> float:
        return self.sigma_sq * self.gamma_sq

    @property
    def radius(self) -> float:
        return float(np.sqrt(self.radius_sq))

    @property
    def alpha(self) -> float:
        return chi_square_quantile_check(self.gamma_sq)

    def to_dict(self) -> dict[str, t.Any]:
        return {
            "sigma_sq": self.sigma_sq,
            "gamma_sq": self.gamma_sq,
            "radius_sq": self.radius_sq,
            "radius": self.radius,
            "alpha": self.alpha,
            "inlier_count": self.inlier_count,
            "fallback": self.fallback,
        }


@dataclass(frozen=True, eq=False)
class SearchZone:
    source_index: int
    candidates: np.ndarray

    def __len__(self) -> int:
        return len(self.candidates)


def select_pseudo_inliers(
    c_vis: CorrespondenceSet, t_pri: RigidTransform, t_inlier: float
) -> CorrespondenceSet:
    """
    The visual correspondences within `t_inlier` of their target under the prior.
    """
    if not t_inlier > 0:
        raise InvalidConfig(f"t_inlier must be positive, got {t_inlier}")
    if not len(c_vis):
        return c_vis
    return c_vis.select(c_vis.residuals(t_pri) <= t_inlier)


def estimate_sigma(
    c_in: CorrespondenceSet,
    t_pri: RigidTransform,
    floor: float,
    *,
    gamma_sq: float = DEFAULT_GAMMA_SQ,
    t_inlier: float | None = None,
    min_inliers: int = DEFAULT_MIN_INLIERS,
) -> ErrorModel:
    """
    Moment estimate `σ̂² = Σ‖T(p) - q‖² / (3·|C_in|)`, never below `floor`.

    With fewer than `min_inliers` pseudo-inliers, `σ̂² = t_inlier² / γ²` so the
    zone radius falls back to `t_inlier` (or to the floor if no threshold
    is given).
    """
    if not floor > 0:
        raise InvalidConfig(f"sigma floor must be positive, got {floor}")
    n = len(c_in)
    if n < min_inliers:
        sigma_sq = floor if t_inlier is None else t_inlier * t_inlier / gamma_sq
        logger.debug("only %d pseudo-inliers: sigma fallback %.3g", n, sigma_sq)
        return ErrorModel(max(sigma_sq, floor), gamma_sq, n, fallback=True)

    res = c_in.residuals(t_pri)
    sigma_sq = float(np.sum(res * res)) / (3.0 * n)
    return ErrorModel(max(sigma_sq, floor), gamma_sq, n)


def chi_square_quantile_check(gamma_sq: float) -> float:
    """
    `P(χ²₃ <= γ²)`: the share of residuals expected inside the zone.
    """
    if not gamma_sq > 0:
        raise InvalidConfig(f"gamma_sq must be positive, got {gamma_sq}")
    return float(chi2.cdf(gamma_sq, df=3))


def _as_index(q: "PointCloud | SpatialIndex3") -> SpatialIndex3:
    return q if isinstance(q, SpatialIndex3) else SpatialIndex3(q.points)


def build_search_zones(
    p: PointCloud,
    p_sample: t.Any,
    t_pri: RigidTransform,
    q: "PointCloud | SpatialIndex3",
    model: ErrorModel,
    *,
    radius: float | None = None,
) -> list[SearchZone]:
    """
    For each sampled source point, the target indices `j` with
    `‖T(p_i) - q_j‖² <= ε`. A fixed `radius` replaces `ε` by `radius²`.
    """
    radius_sq = model.radius_sq if radius is None else float(radius) * float(radius)
    if not radius_sq > 0:
        raise InvalidConfig("search zone radius must be positive")
    sample = np.asarray(p_sample, dtype=np.int64)
    centers = t_pri.apply(p.points[sample]) if len(sample) else np.empty((0, 3))
    found = _as_index(q).radius_query_many(centers, radius_sq)
    return [
        SearchZone(int(i), cand)
        for i, cand in zip(sample, found, strict=True)
    ]


def local_feature_match(
    zones: t.Sequence[SearchZone],
    fp: FeatureSet,
    fq: FeatureSet,
    p: PointCloud,
    q: PointCloud,
    *,
    bandwidth: float | None = None,
) -> CorrespondenceSet:
    """
    For every non-empty zone, the candidate closest to the source point in
    feature space (smallest index on ties).
    """
    src_ids, dst_ids, dists = [], [], []
    for zone in zones:
        if not len(zone):
            continue
        cand = zone.candidates
        diff = fq.vectors[cand].astype(np.float64) - fp.vectors[zone.source_index].astype(np.float64)
        d2 = np.einsum("ij,ij->i", diff, diff)
        best = int(d2.argmin())
        src_ids.append(zone.source_index)
        dst_ids.append(int(cand[best]))
        dists.append(float(np.sqrt(d2[best])))

    if not src_ids:
        return CorrespondenceSet.empty()
    src_idx = np.asarray(src_ids, dtype=np.int64)
    dst_idx = np.asarray(dst_ids, dtype=np.int64)
    return CorrespondenceSet.from_arrays(
        p.points[src_idx],
        q.points[dst_idx],
        kernel_weights(np.asarray(dists), bandwidth),
        provenance=Provenance.GEOMETRIC,
        src_index=src_idx,
        dst_index=dst_idx,
    )


def sample_sources(p: PointCloud, cfg: VgmConfig, seed: "int | np.random.Generator | None" = 0) -> np.ndarray:
    """
    Source indices searched by the matcher: all of them, or a seeded uniform
    sample of `max_source_points`.
    """
    return sample_indices(len(p), cfg.max_source_points, make_rng(seed))


def vgm_extract(
    p: PointCloud,
    q: PointCloud,
    fp: FeatureSet,
    fq: FeatureSet,
    c_vis: CorrespondenceSet,
    t_pri: RigidTransform,
    cfg: VgmConfig,
    *,
    sample: t.Any = None,
    q_index: SpatialIndex3 | None = None,
    seed: "int | np.random.Generator | None" = 0,
) -> tuple[CorrespondenceSet, ErrorModel]:
    """
    Pseudo-inliers -> error model -> search zones -> local feature matches.
    Returns the extracted geometric correspondences followed by `c_vis`.
    """
    check_aligned(fp, p, "fp")
    check_aligned(fq, q, "fq")
    if sample is None:
        sample = sample_sources(p, cfg, seed)

    c_in = select_pseudo_inliers(c_vis, t_pri, cfg.t_inlier)
    model = estimate_sigma(
        c_in, t_pri, cfg.sigma_floor,
        gamma_sq=cfg.gamma_sq, t_inlier=cfg.t_inlier, min_inliers=cfg.min_inliers,
    )
    zones = build_search_zones(
        p, sample, t_pri, q_index if q_index is not None else q, model, radius=cfg.zone_radius
    )
    c_geo = local_feature_match(zones, fp, fq, p, q, bandwidth=cfg.bandwidth)
    logger.debug(
        "vgm: %d pseudo-inliers, sigma_sq %.3g, %d of %d zones matched",
        len(c_in), model.sigma_sq, len(c_geo), len(zones),
    )

    c = CorrespondenceSet.concatenate(c_geo, c_vis)
    if not len(c):
        raise NoCorrespondences("no geometric match in any search zone and no visual match")
    return c, model


def gate_visual(
    c: CorrespondenceSet, t_pri: RigidTransform, t_inlier: float
) -> CorrespondenceSet:
    """
    Keeps every geometric correspondence and only the visual ones that are
    pseudo-inliers of `t_pri`, so visual outliers never reach the fit.
    """
    keep = (c.provenance != Provenance.VISUAL) | (c.residuals(t_pri) <= t_inlier)
    return c.select(keep)
