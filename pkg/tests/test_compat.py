import itertools

import numpy as np
import pytest

from vigg import InvalidConfig
from vigg.compat import (
    CompatGraph,
    build_graph,
    degeneracy_order,
    enumerate_maximal_cliques,
)
from vigg.geometry import CorrespondenceSet, RigidTransform

from .data import exact_pairs, random_points


def brute_force_cliques(graph, min_size=3):
    adj = graph.adjacency
    n = graph.node_count
    found = []
    for size in range(n, min_size - 1, -1):
        for subset in itertools.combinations(range(n), size):
            if not all(adj[i, j] for i, j in itertools.combinations(subset, 2)):
                continue
            others = set(range(n)) - set(subset)
            if any(all(adj[v, i] for i in subset) for v in others):
                continue
            found.append(subset)
    return sorted(found, key=lambda q: (-len(q), q))


def cocktail_party(pairs):
    """Complete graph minus a perfect matching: 2**pairs maximal cliques of size `pairs`."""
    n = 2 * pairs
    edges = [(i, j) for i, j in itertools.combinations(range(n), 2) if j != i + 1 or i % 2]
    return CompatGraph.from_edges(n, edges)


def test_exact_inliers_are_adjacent():
    graph = build_graph(exact_pairs(RigidTransform.random(0), 2), 0.1)
    assert graph.adjacency[0, 1]


def test_distance_disagreement_breaks_edge():
    c = CorrespondenceSet.from_arrays(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        [[0.0, 0.0, 0.0], [1.5, 0.0, 0.0]],
    )
    assert build_graph(c, 0.1).edge_count == 0


def test_graph_matches_pairwise_distances():
    c = CorrespondenceSet.from_arrays(random_points(30, seed=1), random_points(30, seed=2))
    graph = build_graph(c, 0.3)
    for i, j in itertools.product(range(30), repeat=2):
        dp = np.linalg.norm(c.src[i] - c.src[j])
        dq = np.linalg.norm(c.dst[i] - c.dst[j])
        assert graph.adjacency[i, j] == (i != j and abs(dp - dq) <= 0.3)


def test_looser_threshold_keeps_every_edge():
    c = CorrespondenceSet.from_arrays(random_points(40, seed=3), random_points(40, seed=4))
    thresholds = [0.05, 0.1, 0.3, 0.6, 1.5]
    graphs = [build_graph(c, thr) for thr in thresholds]
    for tight, loose in itertools.pairwise(graphs):
        assert not (tight.adjacency & ~loose.adjacency).any()
        assert tight.edge_count <= loose.edge_count


def test_empty_graph():
    graph = build_graph(CorrespondenceSet.empty(), 0.1)
    assert graph.node_count == 0
    assert len(enumerate_maximal_cliques(graph)) == 0
    with pytest.raises(InvalidConfig):
        build_graph(CorrespondenceSet.empty(), 0.0)


def test_complete_graph():
    graph = CompatGraph.from_edges(5, itertools.combinations(range(5), 2))
    result = enumerate_maximal_cliques(graph, 3)
    assert result.cliques == ((0, 1, 2, 3, 4),)
    assert not result.truncated


def test_edgeless_graph():
    assert len(enumerate_maximal_cliques(CompatGraph.from_edges(6, []))) == 0


def test_small_cliques_are_dropped():
    graph = CompatGraph.from_edges(5, [(0, 1), (1, 2), (0, 2), (3, 4)])
    assert enumerate_maximal_cliques(graph, 3).cliques == ((0, 1, 2),)
    assert enumerate_maximal_cliques(graph, 4).cliques == ()


@pytest.mark.parametrize("seed", range(50))
def test_matches_subset_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 16))
    density = rng.uniform(0.2, 0.9)
    edges = [(i, j) for i, j in itertools.combinations(range(n), 2) if rng.random() < density]
    graph = CompatGraph.from_edges(n, edges)
    assert list(enumerate_maximal_cliques(graph, 3)) == brute_force_cliques(graph, 3)


def test_deterministic_order():
    rng = np.random.default_rng(7)
    edges = [(i, j) for i, j in itertools.combinations(range(14), 2) if rng.random() < 0.6]
    a = enumerate_maximal_cliques(CompatGraph.from_edges(14, edges))
    b = enumerate_maximal_cliques(CompatGraph.from_edges(14, list(reversed(edges))))
    assert a.cliques == b.cliques


def test_truncation():
    graph = cocktail_party(6)
    full = enumerate_maximal_cliques(graph, 3, max_cliques=64)
    assert len(full) == 64
    assert not full.truncated

    kept = enumerate_maximal_cliques(graph, 3, max_cliques=10)
    assert kept.truncated
    assert len(kept) == 10
    assert set(kept.cliques) <= set(full.cliques)
    assert list(kept.cliques) == sorted(kept.cliques)


def test_invalid_limits():
    graph = CompatGraph.from_edges(3, [])
    with pytest.raises(InvalidConfig):
        enumerate_maximal_cliques(graph, 2)
    with pytest.raises(InvalidConfig):
        enumerate_maximal_cliques(graph, 3, max_cliques=0)


def test_degeneracy_order():
    graph = CompatGraph.from_edges(5, [(0, 1), (1, 2), (2, 0), (2, 3)])
    order = degeneracy_order(graph)
    assert sorted(order) == list(range(5))
    assert order[0] == 4
    assert order[1] == 3


def test_graph_validation():
    with pytest.raises(ValueError):
        CompatGraph(np.array([[False, True], [False, False]]), np.arange(2))
