"""Credential graphs and lateral-movement state dynamics.

A user (legitimate or malicious) sits at an entry node and moves along directed edges
that represent stored service credentials.  The *authentication graph* at time t is the
set of edges leaving any node visited so far.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DanglingEdge,
    DuplicateNode,
    EmptyVisitedSet,
    EntryEqualsTarget,
    GraphError,
    IllegalMove,
)
from .rng import rng_stream

Edge = tuple[str, str]

MAX_NODES = 64


@dataclass(frozen=True)
class NetworkGraph:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    entry: str
    target: str

    def out_edges(self, node: str) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e[0] == node)

    def successors(self, node: str) -> tuple[str, ...]:
        return tuple(v for u, v in self.edges if u == node)

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [list(e) for e in self.edges],
            "entry": self.entry,
            "target": self.target,
        }


@dataclass(frozen=True)
class AuthGraph:
    nodes: frozenset[str]
    edges: tuple[Edge, ...]


@dataclass(frozen=True)
class ZtdState:
    """Lateral-movement state: visited set ``L^t``, current node, and step index.

    The authentication graph is a pure function of ``visited`` and is recomputed on
    demand with :func:`authentication_subgraph`.
    """

    visited: frozenset[str]
    current: str
    time: int = 1

    @property
    def key(self) -> tuple[tuple[str, ...], str]:
        """Time-free identity of the state, used to index value tables."""
        return tuple(sorted(self.visited)), self.current

    def is_visited(self, node: str) -> bool:
        return node in self.visited


def build_graph(
    nodes: Sequence[str],
    edges: Iterable[Sequence[str]],
    entry: str,
    target: str,
    max_nodes: int = MAX_NODES,
) -> NetworkGraph:
    """Validate and freeze a credential graph.

    Nodes and edges are stored in lexicographic order so that every downstream
    enumeration is deterministic.
    """
    node_list = [str(n) for n in nodes]
    seen: set[str] = set()
    for n in node_list:
        if n in seen:
            raise DuplicateNode(f"node {n!r} declared twice")
        seen.add(n)
    if len(node_list) > max_nodes:
        raise GraphError(f"graph has {len(node_list)} nodes, limit is {max_nodes}")
    edge_set: set[Edge] = set()
    for e in edges:
        if len(e) != 2:
            raise GraphError(f"edge {e!r} is not an ordered pair")
        u, v = str(e[0]), str(e[1])
        for end in (u, v):
            if end not in seen:
                raise DanglingEdge(f"edge ({u!r}, {v!r}) references undeclared node {end!r}")
        if u == v:
            raise GraphError(f"self-loop on {u!r}")
        edge_set.add((u, v))
    if entry not in seen:
        raise DanglingEdge(f"entry {entry!r} is not a declared node")
    if target not in seen:
        raise DanglingEdge(f"target {target!r} is not a declared node")
    if entry == target:
        raise EntryEqualsTarget(f"entry and target are both {entry!r}")
    return NetworkGraph(tuple(sorted(node_list)), tuple(sorted(edge_set)), str(entry), str(target))


def random_dag(n_nodes: int, edge_prob: float, seed: int) -> NetworkGraph:
    """Seeded random DAG on ``n00..`` with entry ``n00`` and target the last node.

    A forward path from entry to target is always present.
    """
    if n_nodes < 2:
        raise GraphError("a random DAG needs at least two nodes")
    rng = rng_stream(seed, 0)
    width = len(str(n_nodes - 1))
    names = [f"n{i:0{width}d}" for i in range(n_nodes)]
    edges = set()
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if rng.random() < edge_prob:
                edges.add((names[i], names[j]))
    # backbone: entry -> random increasing chain -> target
    inner = sorted(rng.choice(np.arange(1, n_nodes - 1), size=min(2, n_nodes - 2), replace=False).tolist())
    path = [0, *inner, n_nodes - 1]
    for a, b in zip(path, path[1:]):
        edges.add((names[a], names[b]))
    return build_graph(names, edges, names[0], names[-1])


def initial_state(graph: NetworkGraph) -> ZtdState:
    return ZtdState(frozenset({graph.entry}), graph.entry, 1)


def authentication_subgraph(graph: NetworkGraph, visited: Iterable[str]) -> AuthGraph:
    visited = frozenset(visited)
    if not visited:
        raise EmptyVisitedSet("authentication graph needs at least one visited node")
    return _auth_subgraph(graph, visited)


@lru_cache(maxsize=4096)
def _auth_subgraph(graph: NetworkGraph, visited: frozenset[str]) -> AuthGraph:
    edges = tuple(e for e in graph.edges if e[0] in visited)
    nodes = set(visited)
    for u, v in edges:
        nodes.add(u)
        nodes.add(v)
    return AuthGraph(frozenset(nodes), edges)


def frontier_edges(graph: NetworkGraph, visited: frozenset[str]) -> tuple[Edge, ...]:
    """Edges from a visited node to an unvisited one, in lexicographic order."""
    return _frontier(graph, frozenset(visited))


@lru_cache(maxsize=4096)
def _frontier(graph: NetworkGraph, visited: frozenset[str]) -> tuple[Edge, ...]:
    return tuple(e for e in graph.edges if e[0] in visited and e[1] not in visited)


def apply_move(graph: NetworkGraph, state: ZtdState, edge: Edge | None, passed: bool) -> ZtdState:
    """Advance one step.

    A rejected attempt (``passed=False``) still consumes the step but leaves the
    position unchanged.  ``edge=None`` is the idle move available only when the
    frontier is empty.
    """
    if edge is None:
        if frontier_edges(graph, state.visited):
            raise IllegalMove("idle move is only legal when no frontier edge exists")
        return replace(state, time=state.time + 1)
    edge = (edge[0], edge[1])
    if edge not in frontier_edges(graph, state.visited):
        raise IllegalMove(f"edge {edge!r} is not in the attacker action set")
    if not passed:
        return replace(state, time=state.time + 1)
    return ZtdState(state.visited | {edge[1]}, edge[1], state.time + 1)


def hop_distances(graph: NetworkGraph, weights: dict[Edge, float] | None = None) -> dict[str, float]:
    """Dijkstra distances from every node to the target (edge weights default to 1)."""
    import heapq

    w = weights or {}
    rev: dict[str, list[tuple[str, float]]] = {n: [] for n in graph.nodes}
    for u, v in graph.edges:
        rev[v].append((u, float(w.get((u, v), 1.0))))
    dist = {n: float("inf") for n in graph.nodes}
    dist[graph.target] = 0.0
    heap = [(0.0, graph.target)]
    while heap:
        d, v = heapq.heappop(heap)
        if d > dist[v]:
            continue
        for u, c in rev[v]:
            if d + c < dist[u]:
                dist[u] = d + c
                heapq.heappush(heap, (d + c, u))
    return dist
