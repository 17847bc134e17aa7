"""
vigg | Copyright (c) The vigg developers

Registration metrics and the ablation suites run over synthetic scenes.
"""
import csv
import dataclasses
import io
import math
import os
import typing as t
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .exceptions import EmptyResults, InvalidConfig
from .formats import write_json
from .geometry import CorrespondenceSet, RigidTransform, rotation_error, translation_error
from .pipeline import RegistrationResult, Status, register
from .synth import AmbiguityCluster, Scene, SceneSpec, generate_scene, make_geometric_matches
from .utils import logger


FAILED_ROTATION = 180.0
FAILED_TRANSLATION = math.inf
GUIDANCE_MATCHES = 100
# Clique budget of the suites when no configuration is given.
BENCH_MAX_CLIQUES = 1000


@dataclass(frozen=True)
class EvalThresholds:
    rotation_deg: tuple[float, ...] = (2.0, 5.0, 10.0)
    translation_cm: tuple[float, ...] = (5.0, 10.0, 25.0)
    recall_rotation_deg: float = 15.0
    recall_translation_cm: float = 30.0

    def __post_init__(self) -> None:
        for name in ("rotation_deg", "translation_cm"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values or values[0] <= 0 or any(b <= a for a, b in zip(values, values[1:])):
                raise InvalidConfig(f"{name} must be positive and strictly increasing, got {values}")
            object.__setattr__(self, name, values)
        if not (self.recall_rotation_deg > 0 and self.recall_translation_cm > 0):
            raise InvalidConfig("recall thresholds must be positive")

    @classmethod
    def indoor(cls) -> "EvalThresholds":
        return cls()

    @classmethod
    def outdoor(cls) -> "EvalThresholds":
        return cls(recall_rotation_deg=5.0, recall_translation_cm=60.0)

    @classmethod
    def for_preset(cls, preset: str | None) -> "EvalThresholds":
        return cls.outdoor() if preset == "outdoor" else cls.indoor()

    def recalled(self, re_deg: float, te_m: float) -> bool:
        return re_deg <= self.recall_rotation_deg and te_m <= self.recall_translation_cm / 100.0

    def to_dict(self) -> dict[str, t.Any]:
        return {
            "rotation_deg": list(self.rotation_deg),
            "translation_cm": list(self.translation_cm),
            "recall_rotation_deg": self.recall_rotation_deg,
            "recall_translation_cm": self.recall_translation_cm,
        }


def _finite(value: float) -> float | None:
    return value if math.isfinite(value) else None


@dataclass(frozen=True)
class PairOutcome:
    """
    Errors of one registered pair. A failed registration counts as
    RE 180° and TE +inf.
    """

    pair_id: int
    status: Status
    rotation_error: float
    translation_error: float
    recalled: bool

    @property
    def failed(self) -> bool:
        return self.status is not Status.OK

    def to_dict(self) -> dict[str, t.Any]:
        return {
            "pair_id": self.pair_id,
            "status": self.status.value,
            "rotation_error": self.rotation_error,
            "translation_error": _finite(self.translation_error),
            "recalled": self.recalled,
        }


@dataclass(frozen=True)
class MetricsReport:
    pairs: tuple[PairOutcome, ...]
    thresholds: EvalThresholds
    rotation_accuracy: tuple[float, ...]
    translation_accuracy: tuple[float, ...]
    recall: float
    median_rotation_error: float
    median_translation_error: float
    failure_count: int

    def to_dict(self, *, pairs: bool = True) -> dict[str, t.Any]:
        data: dict[str, t.Any] = {
            "thresholds": self.thresholds.to_dict(),
            "rotation_accuracy": list(self.rotation_accuracy),
            "translation_accuracy": list(self.translation_accuracy),
            "recall": self.recall,
            "median_rotation_error": self.median_rotation_error,
            # null when failures reach the median
            "median_translation_error": _finite(self.median_translation_error),
            "failure_count": self.failure_count,
            "pair_count": len(self.pairs),
        }
        if pairs:
            data["pairs"] = [pair.to_dict() for pair in self.pairs]
        return data


def pair_errors(result: RegistrationResult, truth: RigidTransform) -> tuple[float, float]:
    if not result.ok:
        return FAILED_ROTATION, FAILED_TRANSLATION
    return rotation_error(result.transform, truth), translation_error(result.transform, truth)


def compute_metrics(
    results: t.Sequence[tuple[RegistrationResult, RigidTransform]],
    thresholds: EvalThresholds | None = None,
) -> MetricsReport:
    """
    Accuracy at each threshold (inclusive), registration recall and
    median errors over every pair, failures included.
    """
    if not len(results):
        raise EmptyResults("no registration results to evaluate")
    thresholds = thresholds or EvalThresholds()

    pairs = []
    for pair_id, (result, truth) in enumerate(results):
        re_deg, te_m = pair_errors(result, truth)
        pairs.append(PairOutcome(
            pair_id=pair_id,
            status=result.status,
            rotation_error=re_deg,
            translation_error=te_m,
            recalled=result.ok and thresholds.recalled(re_deg, te_m),
        ))

    re = np.array([p.rotation_error for p in pairs])
    te = np.array([p.translation_error for p in pairs])
    return MetricsReport(
        pairs=tuple(pairs),
        thresholds=thresholds,
        rotation_accuracy=tuple(float((re <= tau).mean()) for tau in thresholds.rotation_deg),
        translation_accuracy=tuple(
            float((te <= tau / 100.0).mean()) for tau in thresholds.translation_cm
        ),
        recall=float(np.mean([p.recalled for p in pairs])),
        median_rotation_error=float(np.median(re)),
        median_translation_error=float(np.median(te)),
        failure_count=sum(p.failed for p in pairs),
    )


def inlier_ratio(c: CorrespondenceSet, truth: RigidTransform, t_inlier: float) -> float:
    """
    Share of correspondences within `t_inlier` of their target under the
    ground truth (0 for an empty set).
    """
    if not len(c):
        return 0.0
    return float((c.residuals(truth) <= t_inlier).mean())


# Ablations


class Suite(str, Enum):
    ITERATIONS = "iterations"
    GUIDANCE = "guidance"
    NOISE = "noise"
    GAMMA_SWEEP = "gamma_sweep"
    ZONE_FIXED_VS_DYNAMIC = "zone_fixed_vs_dynamic"


@dataclass(frozen=True)
class Cell:
    """
    One configuration of a suite. `guidance_ratio` replaces the computed
    geometric guidance by `GUIDANCE_MATCHES` matches with that inlier ratio.
    """

    name: str
    params: dict[str, t.Any]
    spec_changes: dict[str, t.Any] = dataclasses.field(default_factory=dict)
    cfg_changes: dict[str, t.Any] = dataclasses.field(default_factory=dict)
    guidance_ratio: float | None = None


def suite_cells(suite: "Suite | str", cfg: PipelineConfig) -> list[Cell]:
    suite = Suite(suite)
    if suite is Suite.ITERATIONS:
        return [
            Cell(f"iterations={k}", {"iterations": k}, cfg_changes={"iterations": k})
            for k in (0, 3, 5)
        ]
    if suite is Suite.GUIDANCE:
        return [
            Cell("guidance=off", {"guidance": "off"}, cfg_changes={"guidance": False}),
            Cell("guidance=features", {"guidance": "features"}, cfg_changes={"guidance": True}),
            Cell("guidance=0.4", {"guidance": 0.4}, cfg_changes={"guidance": True}, guidance_ratio=0.4),
            Cell("guidance=0.0", {"guidance": 0.0}, cfg_changes={"guidance": True}, guidance_ratio=0.0),
        ]
    if suite is Suite.NOISE:
        iterations = cfg.iterations or 3
        return [
            Cell(
                f"sigma={sigma}/{mode}",
                {"match_noise_sigma": sigma, "mode": mode},
                spec_changes={"match_noise_sigma": sigma},
                cfg_changes={"iterations": iterations if mode == "full" else 0},
            )
            for sigma in (0.0, 0.01, 0.025)
            for mode in ("full", "clique-only")
        ]
    if suite is Suite.GAMMA_SWEEP:
        return [
            Cell(f"gamma_sq={g}", {"gamma_sq": g}, cfg_changes={"gamma_sq": g})
            for g in (2.0, 5.0, 10.0, 20.0)
        ]
    cells = [
        Cell(
            f"zone={factor}xt_inlier",
            {"zone": "fixed", "zone_radius": factor * cfg.t_inlier},
            cfg_changes={"zone_radius": factor * cfg.t_inlier},
        )
        for factor in (0.5, 1.0, 2.0)
    ]
    cells.append(Cell("zone=dynamic", {"zone": "dynamic"}, cfg_changes={"zone_radius": None}))
    return cells


def default_spec(suite: "Suite | str") -> SceneSpec:
    """
    Base scene of each suite: noisy matches where noise matters, the
    ambiguity scenario for the guidance study.
    """
    suite = Suite(suite)
    if suite is Suite.GUIDANCE:
        return SceneSpec(
            visual_match_count=10, visual_inlier_ratio=0.4, ambiguity_cluster=AmbiguityCluster(6)
        )
    if suite is Suite.NOISE:
        return SceneSpec()
    return SceneSpec(match_noise_sigma=0.025)


@dataclass(frozen=True)
class AblationRow:
    suite: str
    cell: str
    seed: int
    status: str
    rotation_error: float
    translation_error: float
    prior_rotation_error: float
    prior_translation_error: float
    recalled: bool
    prior_recalled: bool
    visual_inlier_ratio: float
    final_inlier_ratio: float
    iterations: int

    def as_csv(self) -> dict[str, str]:
        out = {}
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if isinstance(value, bool):
                out[field.name] = "1" if value else "0"
            elif isinstance(value, float):
                out[field.name] = format(value, ".9g")
            else:
                out[field.name] = str(value)
        return out


@dataclass(frozen=True)
class AblationTable:
    suite: str
    cells: tuple[Cell, ...]
    rows: tuple[AblationRow, ...]
    thresholds: EvalThresholds

    def cell_rows(self, cell: str) -> list[AblationRow]:
        return [row for row in self.rows if row.cell == cell]

    def summary(self) -> dict[str, t.Any]:
        cells = []
        for cell in self.cells:
            rows = self.cell_rows(cell.name)
            re = np.array([row.rotation_error for row in rows])
            te = np.array([row.translation_error for row in rows])
            cells.append({
                "cell": cell.name,
                "params": cell.params,
                "pairs": len(rows),
                "failures": sum(row.status != Status.OK.value for row in rows),
                "recall": float(np.mean([row.recalled for row in rows])),
                "prior_recall": float(np.mean([row.prior_recalled for row in rows])),
                "median_rotation_error": float(np.median(re)),
                "median_translation_error": _finite(float(np.median(te))),
                "median_prior_rotation_error": float(
                    np.median([row.prior_rotation_error for row in rows])
                ),
                "median_visual_inlier_ratio": float(
                    np.median([row.visual_inlier_ratio for row in rows])
                ),
                "median_final_inlier_ratio": float(
                    np.median([row.final_inlier_ratio for row in rows])
                ),
            })
        return {"suite": self.suite, "thresholds": self.thresholds.to_dict(), "cells": cells}

    def to_csv(self) -> str:
        buffer = io.StringIO()
        names = [field.name for field in dataclasses.fields(AblationRow)]
        writer = csv.DictWriter(buffer, fieldnames=names, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row.as_csv())
        return buffer.getvalue()

    def write(self, csv_path: "str | Path", json_path: "str | Path | None" = None) -> None:
        Path(csv_path).write_text(self.to_csv())
        if json_path is not None:
            write_json(json_path, self.summary())


def _run_cell(
    suite: str,
    cell: Cell,
    scene: Scene,
    cfg: PipelineConfig,
    thresholds: EvalThresholds,
) -> AblationRow:
    guidance = None
    if cell.guidance_ratio is not None:
        guidance = make_geometric_matches(scene, GUIDANCE_MATCHES, cell.guidance_ratio, seed=scene.spec.seed)
    result = register(scene.p, scene.q, scene.fp, scene.fq, scene.c_vis, cfg, guidance=guidance)

    re_deg, te_m = pair_errors(result, scene.truth)
    if result.status is Status.FAILED_NO_HYPOTHESIS:
        prior_re, prior_te = FAILED_ROTATION, FAILED_TRANSLATION
    else:
        prior_re = rotation_error(result.prior, scene.truth)
        prior_te = translation_error(result.prior, scene.truth)
    final = result.correspondences
    return AblationRow(
        suite=suite,
        cell=cell.name,
        seed=scene.spec.seed,
        status=result.status.value,
        rotation_error=re_deg,
        translation_error=te_m,
        prior_rotation_error=prior_re,
        prior_translation_error=prior_te,
        recalled=result.ok and thresholds.recalled(re_deg, te_m),
        prior_recalled=result.status is not Status.FAILED_NO_HYPOTHESIS
        and thresholds.recalled(prior_re, prior_te),
        visual_inlier_ratio=inlier_ratio(scene.c_vis, scene.truth, cfg.t_inlier),
        final_inlier_ratio=inlier_ratio(scene.c_vis if final is None else final, scene.truth, cfg.t_inlier),
        iterations=len(result.trace),
    )


def run_ablation(
    suite: "Suite | str",
    base_spec: SceneSpec | None = None,
    cfg: PipelineConfig | None = None,
    *,
    seeds: int = 20,
    workers: int | None = None,
    thresholds: EvalThresholds | None = None,
) -> AblationTable:
    """
    Runs every cell of `suite` on `seeds` scenes (seeds `base_spec.seed`,
    `base_spec.seed + 1`, ...). Scenes run on a worker pool; rows come back
    cell by cell, in seed order.
    """
    suite = Suite(suite)
    base_spec = base_spec or default_spec(suite)
    cfg = cfg or PipelineConfig(max_cliques=BENCH_MAX_CLIQUES)
    thresholds = thresholds or EvalThresholds()
    if seeds < 1:
        raise InvalidConfig(f"seeds must be >= 1, got {seeds}")
    cells = suite_cells(suite, cfg)

    def run_seed(seed: int) -> list[AblationRow]:
        scenes: dict[tuple[tuple[str, t.Any], ...], Scene] = {}
        rows = []
        for cell in cells:
            key = tuple(sorted(cell.spec_changes.items()))
            if key not in scenes:
                scenes[key] = generate_scene(base_spec.replace(seed=seed, **cell.spec_changes))
            rows.append(_run_cell(suite.value, cell, scenes[key], cfg.replace(**cell.cfg_changes), thresholds))
        logger.info("%s: seed %d done", suite.value, seed)
        return rows

    seed_list = [base_spec.seed + i for i in range(seeds)]
    with ThreadPoolExecutor(max_workers=workers or os.cpu_count() or 1) as pool:
        per_seed = list(pool.map(run_seed, seed_list))

    rows = tuple(per_seed[s][c] for c in range(len(cells)) for s in range(len(seed_list)))
    return AblationTable(suite.value, tuple(cells), rows, thresholds)
