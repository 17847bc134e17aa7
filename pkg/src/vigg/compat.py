"""
vigg | Copyright (c) The vigg developers
"""
import heapq
import typing as t
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidConfig
from .geometry import CorrespondenceSet
from .utils import logger, readonly


DEFAULT_MAX_CLIQUES = 100_000
DEFAULT_MIN_SIZE = 3

# A clique is a strictly ascending tuple of node indices.
Clique = tuple[int, ...]


@dataclass(frozen=True, eq=False)
class CompatGraph:
    """
    Undirected graph over correspondences; nodes `i`, `j` are adjacent when
    their source-side and target-side distances agree within the threshold.

    `bits[i]` is node i's neighborhood packed in an int (bit j set iff i~j).
    """

    adjacency: np.ndarray
    correspondence_index: np.ndarray
    bits: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        adj = np.array(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got {adj.shape}")
        if not (adj == adj.T).all():
            raise ValueError("adjacency must be symmetric")
        np.fill_diagonal(adj, False)
        object.__setattr__(self, "adjacency", readonly(adj))
        object.__setattr__(
            self, "correspondence_index",
            readonly(np.array(self.correspondence_index, dtype=np.int64)),
        )
        object.__setattr__(self, "bits", tuple(_pack(row) for row in adj))

    @classmethod
    def from_edges(cls, n: int, edges: t.Iterable[tuple[int, int]]) -> "CompatGraph":
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            if i != j:
                adj[i, j] = adj[j, i] = True
        return cls(adj, np.arange(n))

    @property
    def node_count(self) -> int:
        return len(self.adjacency)

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum()) // 2

    def degree(self, node: int) -> int:
        return self.bits[node].bit_count()


def _pack(row: np.ndarray) -> int:
    packed = np.packbits(row, bitorder="little").tobytes()
    return int.from_bytes(packed, "little")


def _members(bits: int) -> t.Iterator[int]:
    while bits:
        low = bits & -bits
        yield low.bit_length() - 1
        bits ^= low


def build_graph(c: CorrespondenceSet, compat_threshold: float) -> CompatGraph:
    """
    Edge `(i, j)` iff `|‖p_i - p_j‖ - ‖q_i - q_j‖| <= compat_threshold`, `i != j`.
    """
    if not compat_threshold > 0:
        raise InvalidConfig(f"compat_threshold must be positive, got {compat_threshold}")
    n = len(c)
    if not n:
        return CompatGraph(np.zeros((0, 0), dtype=bool), np.empty(0, dtype=np.int64))
    dp = np.linalg.norm(c.src[:, None, :] - c.src[None, :, :], axis=-1)
    dq = np.linalg.norm(c.dst[:, None, :] - c.dst[None, :, :], axis=-1)
    adj = np.abs(dp - dq) <= compat_threshold
    adj = adj & adj.T
    np.fill_diagonal(adj, False)
    graph = CompatGraph(adj, np.arange(n))
    logger.debug("compatibility graph: %d nodes, %d edges", n, graph.edge_count)
    return graph


@dataclass(frozen=True)
class CliqueEnumeration:
    """
    Maximal cliques ordered by size (descending) then lexicographically.
    `truncated` is set when more cliques existed than were kept.
    """

    cliques: tuple[Clique, ...]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.cliques)

    def __iter__(self) -> t.Iterator[Clique]:
        return iter(self.cliques)


def degeneracy_order(graph: CompatGraph) -> list[int]:
    """
    Repeatedly removes a minimum-degree node (lowest index on ties).
    """
    n = graph.node_count
    degree = [graph.degree(v) for v in range(n)]
    heap = [(degree[v], v) for v in range(n)]
    heapq.heapify(heap)
    removed = [False] * n
    order = []
    while heap:
        d, v = heapq.heappop(heap)
        if removed[v] or d != degree[v]:
            continue
        removed[v] = True
        order.append(v)
        for u in _members(graph.bits[v]):
            if not removed[u]:
                degree[u] -= 1
                heapq.heappush(heap, (degree[u], u))
    return order


class _Collector:
    """
    Keeps the `limit` best cliques by (size desc, lexicographic asc).
    """

    def __init__(self, limit: int) -> None:
        self.limit = limit
        self.heap: list[tuple[int, tuple[int, ...], Clique]] = []
        self.found = 0

    @staticmethod
    def _key(clique: Clique) -> tuple[int, tuple[int, ...]]:
        # Min-heap root = worst kept clique: smallest, then lexicographically largest.
        return len(clique), tuple(-v for v in clique)

    @property
    def exhausted(self) -> bool:
        return self.found > self.limit

    def add(self, clique: Clique) -> None:
        self.found += 1
        size, neg = self._key(clique)
        item = (size, neg, clique)
        if len(self.heap) < self.limit:
            heapq.heappush(self.heap, item)
        elif item[:2] > self.heap[0][:2]:
            heapq.heapreplace(self.heap, item)

    def result(self) -> CliqueEnumeration:
        cliques = sorted((item[2] for item in self.heap), key=lambda q: (-len(q), q))
        return CliqueEnumeration(tuple(cliques), truncated=self.found > self.limit)


def enumerate_maximal_cliques(
    graph: CompatGraph,
    min_size: int = DEFAULT_MIN_SIZE,
    max_cliques: int = DEFAULT_MAX_CLIQUES,
) -> CliqueEnumeration:
    """
    Maximal cliques of at least `min_size` nodes, by Bron–Kerbosch with
    pivoting over a degeneracy ordering.

    The search stops once more than `max_cliques` cliques have been found;
    the `max_cliques` largest of them are returned, flagged as truncated.
    """
    if min_size < 3:
        raise InvalidConfig(f"min_size must be >= 3, got {min_size}")
    if max_cliques < 1:
        raise InvalidConfig(f"max_cliques must be >= 1, got {max_cliques}")

    bits = graph.bits
    collector = _Collector(max_cliques)

    def expand(clique: list[int], cand: int, excl: int) -> None:
        if collector.exhausted:
            return
        if not cand:
            if not excl and len(clique) >= min_size:
                collector.add(tuple(sorted(clique)))
            return
        if len(clique) + cand.bit_count() < min_size:
            return
        # Candidates adjacent to all other candidates are in every clique of this branch.
        forced = [u for u in _members(cand) if not cand & ~bits[u] & ~(1 << u)]
        if forced:
            for u in forced:
                excl &= bits[u]
                cand &= ~(1 << u)
            clique.extend(forced)
            expand(clique, cand, excl)
            del clique[-len(forced):]
            return
        pivot = max(_members(cand | excl), key=lambda u: ((cand & bits[u]).bit_count(), -u))
        for v in _members(cand & ~bits[pivot]):
            clique.append(v)
            expand(clique, cand & bits[v], excl & bits[v])
            clique.pop()
            cand &= ~(1 << v)
            excl |= 1 << v

    later = 0
    for v in range(graph.node_count):
        later |= 1 << v
    for v in degeneracy_order(graph):
        later &= ~(1 << v)
        earlier_mask = ~later & ~(1 << v)
        expand([v], bits[v] & later, bits[v] & earlier_mask)

    result = collector.result()
    if result.truncated:
        logger.warning(
            "clique enumeration truncated after %d maximal cliques", len(result),
        )
    return result
