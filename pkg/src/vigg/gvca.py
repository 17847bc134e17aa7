"""
vigg | Copyright (c) The vigg developers

Clique alignment over visual matches with geometric guidance: cliques are
searched among visual correspondences only, and each clique's transform is
scored over the visual and geometric correspondences together.
"""
import typing as t
from dataclasses import asdict, dataclass

import numpy as np

from .compat import (
    DEFAULT_MAX_CLIQUES,
    DEFAULT_MIN_SIZE,
    Clique,
    CliqueEnumeration,
    build_graph,
    enumerate_maximal_cliques,
)
from .exceptions import DegenerateInput, InvalidConfig, NoValidHypothesis
from .geometry import CorrespondenceSet, RigidTransform, fit_weighted
from .utils import logger


SCORE_CHUNK = 256


@dataclass(frozen=True)
class GvcaConfig:
    t_inlier: float = 0.10
    min_clique_size: int = DEFAULT_MIN_SIZE
    max_cliques: int = DEFAULT_MAX_CLIQUES
    compat_threshold: float | None = None

    def __post_init__(self) -> None:
        if not self.t_inlier > 0:
            raise InvalidConfig(f"t_inlier must be positive, got {self.t_inlier}")
        if self.compat_threshold is not None and not self.compat_threshold > 0:
            raise InvalidConfig(f"compat_threshold must be positive, got {self.compat_threshold}")
        if self.min_clique_size < 3 or self.max_cliques < 1:
            raise InvalidConfig("min_clique_size must be >= 3 and max_cliques >= 1")

    @property
    def edge_threshold(self) -> float:
        return self.t_inlier if self.compat_threshold is None else self.compat_threshold


@dataclass(frozen=True, eq=False)
class Hypothesis:
    transform: RigidTransform
    source_clique: Clique
    score: float = 0.0


@dataclass(frozen=True)
class GvcaDiagnostics:
    clique_count: int
    truncated: bool
    hypothesis_count: int
    best_score: float
    runner_up_score: float | None
    winning_clique_size: int
    winning_clique: Clique

    def to_dict(self) -> dict[str, t.Any]:
        data = asdict(self)
        data["winning_clique"] = list(self.winning_clique)
        return data


def hypothesis_from_clique(clique: Clique, c_vis: CorrespondenceSet) -> Hypothesis | None:
    """
    Uniform-weight rigid fit of the clique's correspondences;
    `None` when they are degenerate.
    """
    if len(clique) < 3:
        raise InvalidConfig(f"a hypothesis needs a clique of at least 3 nodes, got {len(clique)}")
    members = c_vis.select(np.asarray(clique, dtype=np.int64)).with_uniform_weights()
    try:
        transform = fit_weighted(members)
    except DegenerateInput:
        return None
    return Hypothesis(transform, tuple(clique))


def _scores(
    rotations: np.ndarray, translations: np.ndarray, eval_set: CorrespondenceSet, t_inlier: float
) -> np.ndarray:
    out = np.zeros(len(rotations))
    if not len(eval_set):
        return out
    src, dst = eval_set.src, eval_set.dst
    for start in range(0, len(rotations), SCORE_CHUNK):
        rot = rotations[start:start + SCORE_CHUNK]
        tra = translations[start:start + SCORE_CHUNK]
        moved = np.einsum("hab,mb->hma", rot, src) + tra[:, None, :]
        res = np.linalg.norm(moved - dst[None, :, :], axis=2)
        out[start:start + SCORE_CHUNK] = np.maximum(0.0, t_inlier - res).sum(axis=1)
    return out


def score_hypothesis(
    transform: RigidTransform, eval_set: CorrespondenceSet, t_inlier: float
) -> float:
    """
    `Σ max(0, t_inlier - ‖T(p_i) - q_i‖)` over the evaluation set.
    """
    scores = _scores(
        transform.rotation[None], transform.translation[None], eval_set, t_inlier
    )
    return float(scores[0])


def evaluate_hypotheses(
    c_vis: CorrespondenceSet,
    c_geo: CorrespondenceSet,
    cfg: GvcaConfig,
) -> tuple[list[Hypothesis], CliqueEnumeration]:
    """
    Every visual clique's hypothesis, scored over `c_vis ∪ c_geo` and ranked
    best first (score, then clique size, then lexicographic clique order).
    """
    graph = build_graph(c_vis, cfg.edge_threshold)
    cliques = enumerate_maximal_cliques(graph, cfg.min_clique_size, cfg.max_cliques)
    fitted = [h for h in (hypothesis_from_clique(q, c_vis) for q in cliques) if h is not None]
    if not fitted:
        return [], cliques

    eval_set = CorrespondenceSet.concatenate(c_vis, c_geo)
    rotations = np.stack([h.transform.rotation for h in fitted])
    translations = np.stack([h.transform.translation for h in fitted])
    scores = _scores(rotations, translations, eval_set, cfg.t_inlier)

    ranked = [
        Hypothesis(h.transform, h.source_clique, float(s))
        for h, s in zip(fitted, scores, strict=True)
    ]
    ranked.sort(key=lambda h: (-h.score, -len(h.source_clique), h.source_clique))
    return ranked, cliques


def gvca_estimate(
    c_vis: CorrespondenceSet,
    c_geo: CorrespondenceSet,
    cfg: GvcaConfig,
) -> tuple[RigidTransform, GvcaDiagnostics]:
    """
    The prior transform: the best-scoring visual clique hypothesis.
    """
    if len(c_vis) < 3:
        raise NoValidHypothesis(f"need at least 3 visual correspondences, got {len(c_vis)}")

    ranked, cliques = evaluate_hypotheses(c_vis, c_geo, cfg)
    if not ranked:
        raise NoValidHypothesis(
            f"none of {len(cliques)} visual cliques produced a non-degenerate transform"
        )

    best = ranked[0]
    diagnostics = GvcaDiagnostics(
        clique_count=len(cliques),
        truncated=cliques.truncated,
        hypothesis_count=len(ranked),
        best_score=best.score,
        runner_up_score=ranked[1].score if len(ranked) > 1 else None,
        winning_clique_size=len(best.source_clique),
        winning_clique=best.source_clique,
    )
    logger.debug(
        "gvca: %d cliques, %d hypotheses, best score %.6f (clique of %d)",
        len(cliques), len(ranked), best.score, len(best.source_clique),
    )
    return best.transform, diagnostics
