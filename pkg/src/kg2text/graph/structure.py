"""Structural statistics over token graphs (undirected view)."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Instance, TokenGraph

UNREACHABLE = -1


def connected_components(g: TokenGraph) -> int:
    parent = list(range(g.num_nodes))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, _, v in g.edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
    return sum(1 for i in range(g.num_nodes) if find(i) == i)


def bfs_distances(adj: Sequence[set[int]], source: int) -> np.ndarray:
    """Hop counts from ``source``; unreachable nodes get ``UNREACHABLE``."""
    dist = np.full(len(adj), UNREACHABLE, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if dist[w] == UNREACHABLE:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def distance_matrix(g: TokenGraph) -> np.ndarray:
    adj = g.undirected_adjacency()
    return np.stack([bfs_distances(adj, s) for s in range(g.num_nodes)]) if g.num_nodes else np.zeros((0, 0), int)


def diameter(g: TokenGraph) -> int:
    """Longest shortest path, taking the max over connected components."""
    if g.num_nodes == 0:
        raise ValueError("diameter of an empty graph is undefined")
    return int(distance_matrix(g).max())


@dataclass(frozen=True)
class StatsRow:
    avg_nodes: float
    avg_edges: float
    avg_cc: float
    avg_length: float

    HEADER = ("avg_nodes", "avg_edges", "avg_cc", "avg_length")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.avg_nodes, self.avg_edges, self.avg_cc, self.avg_length)


def graph_stats(dataset: Sequence[Instance]) -> StatsRow:
    """Dataset means of node count, forward-edge count, components and target length.

    Edge counts include only forward edges (canonical relations plus the two
    forward Levi relations); inverse and self-loop edges are not counted.
    """
    if not dataset:
        raise ValueError("graph_stats needs at least one instance")
    n = len(dataset)
    return StatsRow(
        avg_nodes=sum(inst.graph.num_nodes for inst in dataset) / n,
        avg_edges=sum(len(inst.graph.forward_edges()) for inst in dataset) / n,
        avg_cc=sum(connected_components(inst.graph) for inst in dataset) / n,
        avg_length=sum(len(inst.target) for inst in dataset) / n,
    )
