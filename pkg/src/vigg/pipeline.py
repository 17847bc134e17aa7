"""
vigg | Copyright (c) The vigg developers
"""
import dataclasses
import time
import typing as t
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .config import PipelineConfig
from .exceptions import DegenerateInput, NoCorrespondences, NoValidHypothesis
from .features import FeatureSet, check_aligned, global_feature_match
from .geometry import CorrespondenceSet, PointCloud, Provenance, RigidTransform, fit_weighted
from .gvca import GvcaDiagnostics, gvca_estimate
from .spatial import SpatialIndex3
from .utils import logger
from .vgm import ErrorModel, gate_visual, sample_sources, vgm_extract


class Status(str, Enum):
    OK = "ok"
    FAILED_NO_HYPOTHESIS = "failed_no_hypothesis"
    FAILED_NO_CORRESPONDENCES = "failed_no_correspondences"


@dataclass(frozen=True)
class IterationRecord:
    error_model: ErrorModel
    correspondence_count: int
    geometric_count: int
    visual_count: int

    def to_dict(self) -> dict[str, t.Any]:
        return {
            **self.error_model.to_dict(),
            "correspondence_count": self.correspondence_count,
            "geometric_count": self.geometric_count,
            "visual_count": self.visual_count,
        }


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    status: Status
    transform: RigidTransform
    prior: RigidTransform
    trace: tuple[IterationRecord, ...] = ()
    counts: dict[str, int] = dataclasses.field(default_factory=dict)
    diagnostics: GvcaDiagnostics | None = None
    timings_ms: dict[str, float] = dataclasses.field(default_factory=dict)
    correspondences: CorrespondenceSet | None = None

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    def to_dict(self, *, timings: bool = False) -> dict[str, t.Any]:
        """
        The JSON report. Timings are left out unless asked for, so that
        reruns produce identical reports.
        """
        data: dict[str, t.Any] = {
            "status": self.status.value,
            "transform": self.transform.as_list(),
            "prior": self.prior.as_list(),
            "iterations": [rec.to_dict() for rec in self.trace],
            "counts": dict(self.counts),
            "cliques": self.diagnostics.to_dict() if self.diagnostics else None,
        }
        if timings:
            data["timings_ms"] = dict(self.timings_ms)
        return data


@dataclass(frozen=True, eq=False)
class RegistrationState:
    """
    Everything one refinement step needs. Steps return a new state.
    The source sample is drawn once per registration.
    """

    p: PointCloud
    q: PointCloud
    fp: FeatureSet
    fq: FeatureSet
    c_vis: CorrespondenceSet
    cfg: PipelineConfig
    prior: RigidTransform
    sample: np.ndarray
    q_index: SpatialIndex3
    trace: tuple[IterationRecord, ...] = ()
    correspondences: CorrespondenceSet | None = None

    @classmethod
    def start(
        cls,
        p: PointCloud,
        q: PointCloud,
        fp: FeatureSet,
        fq: FeatureSet,
        c_vis: CorrespondenceSet,
        cfg: PipelineConfig,
        prior: RigidTransform,
        *,
        seed: "int | np.random.Generator | None" = None,
    ) -> "RegistrationState":
        vgm_cfg = cfg.vgm()
        sample = sample_sources(p, vgm_cfg, cfg.seed if seed is None else seed)
        return cls(p, q, fp, fq, c_vis, cfg, prior, sample, SpatialIndex3(q.points))


def refine_iteration(state: RegistrationState) -> RegistrationState:
    """
    One matching + weighted SVD step: zones around the current prior,
    local matches, then the weighted rigid fit becomes the new prior.
    Only the visual pseudo-inliers of the prior enter the fit.
    """
    c, model = vgm_extract(
        state.p, state.q, state.fp, state.fq, state.c_vis, state.prior, state.cfg.vgm(),
        sample=state.sample, q_index=state.q_index,
    )
    c = gate_visual(c, state.prior, state.cfg.t_inlier)
    try:
        transform = fit_weighted(c)
    except DegenerateInput as err:
        raise NoCorrespondences(f"refinement correspondences are degenerate: {err}") from err

    record = IterationRecord(
        error_model=model,
        correspondence_count=len(c),
        geometric_count=c.count(Provenance.GEOMETRIC),
        visual_count=c.count(Provenance.VISUAL),
    )
    return dataclasses.replace(
        state, prior=transform, trace=state.trace + (record,), correspondences=c
    )


def _elapsed_ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


def register(
    p: PointCloud,
    q: PointCloud,
    fp: FeatureSet,
    fq: FeatureSet,
    c_vis: CorrespondenceSet,
    cfg: PipelineConfig | None = None,
    *,
    guidance: CorrespondenceSet | None = None,
) -> RegistrationResult:
    """
    Full registration of P onto Q.

    Guidance matches are computed once, the clique stage gives the prior,
    and each iteration re-matches around the current prior and refits.
    Failures come back as a status, never as an exception.

    `guidance` replaces the global feature matches used to score the
    clique hypotheses; it is ignored when `cfg.guidance` is off.
    """
    cfg = cfg or PipelineConfig()
    check_aligned(fp, p, "fp")
    check_aligned(fq, q, "fq")
    guidance_seed, sample_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    timings: dict[str, float] = {}
    identity = RigidTransform.identity()

    if len(c_vis) < 3:
        logger.warning("registration failed: %d visual matches, need at least 3", len(c_vis))
        return RegistrationResult(
            Status.FAILED_NO_HYPOTHESIS, identity, identity,
            counts={"visual": len(c_vis), "guidance": 0},
            timings_ms=timings,
        )

    start = time.perf_counter()
    if cfg.guidance and guidance is not None:
        c_geo = guidance
    elif cfg.guidance:
        c_geo = global_feature_match(
            fp, fq, p, q, cfg.c_geo_cap,
            seed=np.random.default_rng(guidance_seed), bandwidth=cfg.weight_bandwidth,
        )
    else:
        c_geo = CorrespondenceSet.empty()
    timings["global_match"] = _elapsed_ms(start)

    start = time.perf_counter()
    try:
        prior, diagnostics = gvca_estimate(c_vis, c_geo, cfg.gvca())
    except NoValidHypothesis as err:
        logger.warning("registration failed: %s", err)
        timings["gvca"] = _elapsed_ms(start)
        return RegistrationResult(
            Status.FAILED_NO_HYPOTHESIS, identity, identity,
            counts={"visual": len(c_vis), "guidance": len(c_geo)},
            timings_ms=timings,
        )
    timings["gvca"] = _elapsed_ms(start)

    state = RegistrationState.start(
        p, q, fp, fq, c_vis, cfg, prior, seed=np.random.default_rng(sample_seed)
    )
    status = Status.OK
    for k in range(cfg.iterations):
        start = time.perf_counter()
        try:
            state = refine_iteration(state)
        except NoCorrespondences as err:
            logger.warning("registration failed at iteration %d: %s", k + 1, err)
            status = Status.FAILED_NO_CORRESPONDENCES
            break
        finally:
            timings[f"iteration_{k + 1}"] = _elapsed_ms(start)

    final = state.correspondences
    counts = {"visual": len(c_vis), "guidance": len(c_geo)}
    if final is not None:
        counts["final_geometric"] = final.count(Provenance.GEOMETRIC)
        counts["final_visual"] = final.count(Provenance.VISUAL)

    return RegistrationResult(
        status=status,
        transform=state.prior,
        prior=prior,
        trace=state.trace,
        counts=counts,
        diagnostics=diagnostics,
        timings_ms=timings,
        correspondences=final,
    )
