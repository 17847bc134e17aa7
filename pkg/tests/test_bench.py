import math

import numpy as np
import pytest

from vigg import (
    EmptyResults,
    EvalThresholds,
    InvalidConfig,
    PipelineConfig,
    Suite,
    compute_metrics,
    run_ablation,
)
from vigg.bench import (
    FAILED_ROTATION,
    AblationRow,
    default_spec,
    inlier_ratio,
    pair_errors,
    suite_cells,
)
from vigg.geometry import CorrespondenceSet, RigidTransform
from vigg.pipeline import RegistrationResult, Status
from vigg.synth import AmbiguityCluster

from .data import SMALL_SCENE, exact_pairs


IDENTITY = RigidTransform.identity()


def ok(transform):
    return RegistrationResult(Status.OK, transform, transform)


def failed():
    return RegistrationResult(Status.FAILED_NO_HYPOTHESIS, IDENTITY, IDENTITY)


def test_all_exact():
    truth = RigidTransform.random(1)
    report = compute_metrics([(ok(truth), truth)] * 4)
    assert report.rotation_accuracy == (1.0, 1.0, 1.0)
    assert report.translation_accuracy == (1.0, 1.0, 1.0)
    assert report.recall == 1.0
    assert report.failure_count == 0


def test_thresholds_are_inclusive():
    off = RigidTransform(np.eye(3), [0.25, 0.0, 0.0])
    report = compute_metrics([(ok(off), IDENTITY)])
    assert report.translation_accuracy == (0.0, 0.0, 1.0)
    assert report.rotation_accuracy == (1.0, 1.0, 1.0)
    assert report.recall == 1.0


def test_accuracy_levels():
    results = [
        (ok(RigidTransform.from_axis_angle([0, 0, 1], degrees)), IDENTITY)
        for degrees in (1.0, 4.0, 8.0, 30.0)
    ]
    report = compute_metrics(results)
    assert report.rotation_accuracy == (0.25, 0.5, 0.75)
    assert report.recall == 0.75
    assert report.median_rotation_error == pytest.approx(6.0)


def test_failure_sentinel():
    report = compute_metrics([(failed(), IDENTITY), (ok(IDENTITY), IDENTITY)])
    assert pair_errors(failed(), IDENTITY) == (FAILED_ROTATION, math.inf)
    assert report.failure_count == 1
    assert report.recall == 0.5
    assert report.rotation_accuracy == (0.5, 0.5, 0.5)
    data = report.to_dict()
    assert data["pairs"][0]["translation_error"] is None
    assert data["pairs"][0]["status"] == "failed_no_hypothesis"
    assert data["median_translation_error"] is None


def test_empty_results():
    with pytest.raises(EmptyResults):
        compute_metrics([])


def test_outdoor_thresholds():
    off = RigidTransform(np.eye(3), [0.5, 0.0, 0.0])
    assert not EvalThresholds.indoor().recalled(0.0, 0.5)
    assert EvalThresholds.for_preset("outdoor").recalled(0.0, 0.5)
    report = compute_metrics([(ok(off), IDENTITY)], EvalThresholds.outdoor())
    assert report.recall == 1.0


def test_invalid_thresholds():
    with pytest.raises(InvalidConfig, match="increasing"):
        EvalThresholds(rotation_deg=(5.0, 2.0))


def test_inlier_ratio():
    truth = RigidTransform.random(2)
    c = exact_pairs(truth, 10)
    assert inlier_ratio(c, truth, 0.1) == 1.0
    assert inlier_ratio(CorrespondenceSet.empty(), truth, 0.1) == 0.0


def test_suite_cells():
    cfg = PipelineConfig()
    assert [c.name for c in suite_cells("iterations", cfg)] == [
        "iterations=0", "iterations=3", "iterations=5",
    ]
    assert len(suite_cells(Suite.GUIDANCE, cfg)) == 4
    assert len(suite_cells(Suite.NOISE, cfg)) == 6
    assert len(suite_cells(Suite.GAMMA_SWEEP, cfg)) == 4
    zones = suite_cells(Suite.ZONE_FIXED_VS_DYNAMIC, cfg)
    assert [c.cfg_changes["zone_radius"] for c in zones] == [0.05, 0.1, 0.2, None]
    assert default_spec(Suite.GUIDANCE).ambiguity_cluster.size == 6


def test_iterations_suite():
    cfg = PipelineConfig(max_cliques=50)
    spec = SMALL_SCENE.replace(match_noise_sigma=0.01)
    table = run_ablation("iterations", spec, cfg, seeds=2, workers=2)
    assert len(table.rows) == 6
    assert [(row.cell, row.seed) for row in table.rows] == [
        ("iterations=0", 0), ("iterations=0", 1),
        ("iterations=3", 0), ("iterations=3", 1),
        ("iterations=5", 0), ("iterations=5", 1),
    ]
    assert [row.iterations for row in table.cell_rows("iterations=5")] == [5, 5]
    summary = table.summary()
    assert [cell["pairs"] for cell in summary["cells"]] == [2, 2, 2]

    csv = table.to_csv().splitlines()
    assert csv[0].startswith("suite,cell,seed,status,")
    assert len(csv) == 7
    again = run_ablation("iterations", spec, cfg, seeds=2, workers=1)
    assert again.to_csv() == table.to_csv()


def test_guidance_suite():
    spec = SMALL_SCENE.replace(
        visual_match_count=10, visual_inlier_ratio=0.4, ambiguity_cluster=AmbiguityCluster(6)
    )
    table = run_ablation(Suite.GUIDANCE, spec, PipelineConfig(iterations=1), seeds=1)
    assert [row.cell for row in table.rows] == [
        "guidance=off", "guidance=features", "guidance=0.4", "guidance=0.0",
    ]
    assert {row.visual_inlier_ratio for row in table.rows} == {0.4}


def test_csv_row_format():
    row = AblationRow(
        suite="noise", cell="sigma=0.0/full", seed=0, status="failed_no_hypothesis",
        rotation_error=180.0, translation_error=math.inf,
        prior_rotation_error=180.0, prior_translation_error=math.inf,
        recalled=False, prior_recalled=False,
        visual_inlier_ratio=0.7, final_inlier_ratio=0.7, iterations=0,
    )
    assert row.as_csv()["translation_error"] == "inf"
    assert row.as_csv()["recalled"] == "0"


def test_invalid_seed_count():
    with pytest.raises(InvalidConfig, match="seeds"):
        run_ablation("iterations", SMALL_SCENE, seeds=0)


# Trend checks on small scenes: few seeds, medians over the cells.

TREND_SEEDS = 4
TREND_CFG = PipelineConfig(max_cliques=200)
NOISY_SCENE = SMALL_SCENE.replace(match_noise_sigma=0.025)
# Near-exact fits sit at the noise floor of the weighted fit.
FLOOR_DEG = 0.05


def median_re(table, cell):
    return float(np.median([row.rotation_error for row in table.cell_rows(cell)]))


def recall_rate(table, cell):
    return float(np.mean([row.prior_recalled for row in table.cell_rows(cell)]))


def test_iterations_trend():
    table = run_ablation(Suite.ITERATIONS, NOISY_SCENE, TREND_CFG, seeds=TREND_SEEDS)
    re0 = median_re(table, "iterations=0")
    re3 = median_re(table, "iterations=3")
    re5 = median_re(table, "iterations=5")
    assert re3 <= re0
    assert abs(re5 - re3) <= 0.05 * re3 + 1e-3


def test_guidance_trend():
    spec = SMALL_SCENE.replace(
        visual_match_count=10, visual_inlier_ratio=0.4, ambiguity_cluster=AmbiguityCluster(6)
    )
    table = run_ablation(
        Suite.GUIDANCE, spec, TREND_CFG.replace(iterations=1), seeds=TREND_SEEDS
    )
    off = recall_rate(table, "guidance=off")
    assert recall_rate(table, "guidance=0.4") >= off + 0.20
    assert recall_rate(table, "guidance=0.0") >= off - 0.02


def test_noise_trend():
    table = run_ablation(Suite.NOISE, SMALL_SCENE, TREND_CFG, seeds=TREND_SEEDS)
    full_clean = median_re(table, "sigma=0.0/full")
    full_noisy = median_re(table, "sigma=0.025/full")
    clique_clean = median_re(table, "sigma=0.0/clique-only")
    clique_noisy = median_re(table, "sigma=0.025/clique-only")
    assert full_noisy <= 1.5 * full_clean + FLOOR_DEG
    assert clique_noisy >= 2.0 * clique_clean
    assert clique_noisy > full_noisy


def test_gamma_sweep_trend():
    table = run_ablation(Suite.GAMMA_SWEEP, NOISY_SCENE, TREND_CFG, seeds=TREND_SEEDS)
    medians = {g: median_re(table, f"gamma_sq={g}") for g in (2.0, 5.0, 10.0, 20.0)}
    assert medians[2.0] >= medians[10.0] - 1e-3
    plateau = [medians[g] for g in (5.0, 10.0, 20.0)]
    assert max(plateau) - min(plateau) <= 0.10 * min(plateau) + FLOOR_DEG
