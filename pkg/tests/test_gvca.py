import numpy as np
import pytest

from vigg import NoValidHypothesis
from vigg.geometry import (
    CorrespondenceSet,
    Provenance,
    RigidTransform,
    compose,
    rotation_error,
    translation_error,
)
from vigg.gvca import (
    GvcaConfig,
    evaluate_hypotheses,
    gvca_estimate,
    hypothesis_from_clique,
    score_hypothesis,
)

from .data import exact_pairs, horn_fit, random_points


TRUTH = RigidTransform.from_axis_angle([0.2, 1.0, -0.4], 35.0, [0.5, -1.0, 0.3])
CFG = GvcaConfig(t_inlier=0.1)


def ambiguity_scenario(seed=0):
    """
    4 true visual inliers against a block of 6 false matches that agree on
    a wrong transform, plus 40 true and 60 random geometric matches.
    """
    rng = np.random.default_rng(seed)
    wrong = compose(RigidTransform(np.eye(3), [3.0, 0.0, 0.0]), TRUTH)
    true_src = rng.uniform(-1, 1, size=(4, 3))
    false_src = rng.uniform(-0.5, 0.5, size=(6, 3)) + [0.0, 2.0, 0.0]
    c_vis = CorrespondenceSet.from_arrays(
        np.vstack([true_src, false_src]),
        np.vstack([TRUTH.apply(true_src), wrong.apply(false_src)]),
    )
    geo_src = rng.uniform(-2, 2, size=(100, 3))
    geo_dst = np.vstack([
        TRUTH.apply(geo_src[:40]),
        rng.uniform(-4, 4, size=(60, 3)),
    ])
    c_geo = CorrespondenceSet.from_arrays(geo_src, geo_dst, provenance=Provenance.GEOMETRIC)
    return c_vis, c_geo


def test_hypothesis_from_exact_clique():
    c = exact_pairs(TRUTH, 3, seed=1)
    hyp = hypothesis_from_clique((0, 1, 2), c)
    assert rotation_error(hyp.transform, TRUTH) < 1e-9
    assert translation_error(hyp.transform, TRUTH) < 1e-9


def test_collinear_clique():
    line = np.outer(np.arange(4.0), [1.0, 0.5, 0.0])
    c = CorrespondenceSet.from_arrays(line, TRUTH.apply(line))
    assert hypothesis_from_clique((0, 1, 2, 3), c) is None


def test_noisy_clique_matches_closed_form():
    rng = np.random.default_rng(2)
    src = rng.uniform(-1, 1, size=(5, 3))
    dst = TRUTH.apply(src) + rng.normal(scale=0.005, size=(5, 3))
    weights = rng.uniform(0.1, 1.0, size=5)
    hyp = hypothesis_from_clique((0, 1, 2, 3, 4), CorrespondenceSet.from_arrays(src, dst, weights))
    oracle = horn_fit(src, dst)
    assert rotation_error(hyp.transform, oracle) < 1e-9
    assert translation_error(hyp.transform, oracle) < 1e-9


def test_score_hypothesis():
    assert score_hypothesis(TRUTH, CorrespondenceSet.empty(), 0.1) == 0.0
    one = exact_pairs(TRUTH, 1)
    assert score_hypothesis(TRUTH, one, 0.1) == pytest.approx(0.1, abs=1e-15)


def test_score_matches_per_pair_sum():
    rng = np.random.default_rng(3)
    src = random_points(100, seed=3)
    dst = TRUTH.apply(src) + rng.normal(scale=0.08, size=(100, 3))
    c = CorrespondenceSet.from_arrays(src, dst)
    expected = 0.0
    for p, q in zip(src, dst, strict=True):
        expected += max(0.0, 0.1 - float(np.linalg.norm(TRUTH.apply(p) - q)))
    assert score_hypothesis(TRUTH, c, 0.1) == pytest.approx(expected, abs=1e-12)


def test_score_is_additive():
    rng = np.random.default_rng(4)
    src = random_points(60, seed=4)
    c = CorrespondenceSet.from_arrays(src, TRUTH.apply(src) + rng.normal(scale=0.06, size=(60, 3)))
    a, b = c.select(np.arange(25)), c.select(np.arange(25, 60))
    union = CorrespondenceSet.concatenate(a, b)
    assert score_hypothesis(TRUTH, union, 0.1) == pytest.approx(
        score_hypothesis(TRUTH, a, 0.1) + score_hypothesis(TRUTH, b, 0.1), abs=1e-12
    )


def scaled(c, factor):
    return CorrespondenceSet.from_arrays(
        c.src * factor, c.dst * factor, c.weights, provenance=c.provenance
    )


@pytest.mark.parametrize("seed", range(3))
def test_winner_is_scale_free(seed):
    rng = np.random.default_rng(seed)
    c_vis, c_geo = ambiguity_scenario(seed)
    c_vis = CorrespondenceSet.from_arrays(c_vis.src, c_vis.dst + rng.normal(scale=0.02, size=c_vis.dst.shape))
    _, diag = gvca_estimate(c_vis, c_geo, CFG)
    _, big = gvca_estimate(scaled(c_vis, 4.0), scaled(c_geo, 4.0), GvcaConfig(t_inlier=CFG.t_inlier * 4.0))
    assert big.winning_clique == diag.winning_clique
    assert big.clique_count == diag.clique_count
    assert big.best_score == pytest.approx(4.0 * diag.best_score, rel=1e-9)


def test_single_dominant_clique():
    transform, diag = gvca_estimate(exact_pairs(TRUTH, 10, seed=4), CorrespondenceSet.empty(), CFG)
    assert rotation_error(transform, TRUTH) < 1e-9
    assert translation_error(transform, TRUTH) < 1e-9
    assert diag.clique_count == 1
    assert diag.winning_clique == tuple(range(10))
    assert diag.runner_up_score is None
    assert diag.best_score == pytest.approx(1.0)


def test_guidance_outvotes_the_larger_false_clique():
    c_vis, c_geo = ambiguity_scenario()
    transform, diag = gvca_estimate(c_vis, c_geo, CFG)
    assert rotation_error(transform, TRUTH) < 1e-6
    assert translation_error(transform, TRUTH) < 1e-6
    assert diag.winning_clique == (0, 1, 2, 3)


def test_false_clique_wins_without_guidance():
    c_vis, _ = ambiguity_scenario()
    transform, diag = gvca_estimate(c_vis, CorrespondenceSet.empty(), CFG)
    assert translation_error(transform, TRUTH) > 1.0
    assert diag.winning_clique == (4, 5, 6, 7, 8, 9)


def test_exhaustive_scores_of_the_scenario():
    c_vis, c_geo = ambiguity_scenario()
    ranked, _ = evaluate_hypotheses(c_vis, c_geo, CFG)
    eval_set = CorrespondenceSet.concatenate(c_vis, c_geo)
    for hyp in ranked:
        assert hyp.score == pytest.approx(score_hypothesis(hyp.transform, eval_set, 0.1), abs=1e-12)
    scores = [h.score for h in ranked]
    assert scores == sorted(scores, reverse=True)


def test_guidance_soundness():
    near = compose(TRUTH, RigidTransform.from_axis_angle([1, 1, 0], 0.5, [0.01, 0.0, 0.0]))
    far = compose(TRUTH, RigidTransform.from_axis_angle([0, 0, 1], 20.0))
    assert rotation_error(near, TRUTH) < 2.0
    assert translation_error(near, TRUTH) < 0.05
    assert rotation_error(far, TRUTH) > 15.0

    c_vis, _ = ambiguity_scenario()
    geo = exact_pairs(TRUTH, 30, seed=5)
    both = CorrespondenceSet.concatenate(c_vis, geo)

    gain_near = score_hypothesis(near, both, 0.1) - score_hypothesis(near, c_vis, 0.1)
    assert gain_near >= 30 * 0.05

    gain_far = score_hypothesis(far, both, 0.1) - score_hypothesis(far, c_vis, 0.1)
    chance = geo.residuals(far) < 0.1
    assert gain_far <= 0.1 * chance.sum() + 1e-12


def test_deterministic():
    c_vis, c_geo = ambiguity_scenario(seed=9)
    a = gvca_estimate(c_vis, c_geo, CFG)
    b = gvca_estimate(c_vis, c_geo, CFG)
    assert np.array_equal(a[0].matrix, b[0].matrix)
    assert a[1] == b[1]


def test_no_valid_hypothesis():
    with pytest.raises(NoValidHypothesis):
        gvca_estimate(exact_pairs(TRUTH, 2), CorrespondenceSet.empty(), CFG)
    line = np.outer(np.arange(6.0), [1.0, 0.0, 0.0])
    with pytest.raises(NoValidHypothesis):
        gvca_estimate(CorrespondenceSet.from_arrays(line, TRUTH.apply(line)), CorrespondenceSet.empty(), CFG)
    scattered = CorrespondenceSet.from_arrays(random_points(5, seed=1, scale=5), random_points(5, seed=2, scale=5))
    with pytest.raises(NoValidHypothesis):
        gvca_estimate(scattered, CorrespondenceSet.empty(), GvcaConfig(t_inlier=0.001))
