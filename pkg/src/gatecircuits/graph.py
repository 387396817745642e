"""Computational graphs, circuits, and the set algebra over circuit edges."""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

KINDS = ("input", "attention-head", "mlp", "gate-node", "output")
_KIND_RANK = {k: i for i, k in enumerate(KINDS)}


class GraphError(ValueError):
    pass


@dataclass(frozen=True, order=False)
class NodeId:
    kind: str
    layer: int = 0
    index: int = 0

    def __post_init__(self):
        if self.kind not in _KIND_RANK:
            raise GraphError(f"unknown node kind {self.kind!r}")
        if self.layer < 0 or self.index < 0:
            raise GraphError("layer and index must be non-negative")

    @property
    def sort_key(self) -> tuple[int, int, int]:
        return (self.layer, _KIND_RANK[self.kind], self.index)

    @property
    def name(self) -> str:
        if self.kind == "input":
            return f"in{self.index}"
        if self.kind == "attention-head":
            return f"a{self.layer}.{self.index}"
        if self.kind == "mlp":
            return f"m{self.layer}"
        if self.kind == "gate-node":
            return f"g{self.layer}.{self.index}"
        return "out"

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class EdgeId:
    sender: NodeId
    receiver: NodeId

    @property
    def name(self) -> str:
        return f"{self.sender.name}->{self.receiver.name}"

    def __str__(self) -> str:
        return self.name


class ComputationalGraph:
    """Immutable DAG of model components.

    Construction validates acyclicity, a single output node, reachability of
    every non-input node from an input, and that every node with outgoing
    edges reaches the output.
    """

    def __init__(self, nodes: Iterable[NodeId], edges: Iterable[EdgeId]):
        nodes = frozenset(nodes)
        edges = frozenset(edges)
        outputs = [n for n in nodes if n.kind == "output"]
        if not outputs:
            raise GraphError("no output node")
        if len(outputs) > 1:
            raise GraphError("more than one output node")
        for e in edges:
            if e.sender == e.receiver:
                raise GraphError(f"self-edge {e.name}")
            if e.sender not in nodes or e.receiver not in nodes:
                raise GraphError(f"edge {e.name} references unknown node")
        self.nodes = nodes
        self.edges = edges
        self.output = outputs[0]
        self._parents: dict[NodeId, list[NodeId]] = {n: [] for n in nodes}
        self._children: dict[NodeId, list[NodeId]] = {n: [] for n in nodes}
        for e in edges:
            self._parents[e.receiver].append(e.sender)
            self._children[e.sender].append(e.receiver)
        self.topo: tuple[NodeId, ...] = self._toposort()
        self._pos = {n: i for i, n in enumerate(self.topo)}
        for n in nodes:
            self._parents[n].sort(key=self._pos.__getitem__)
            self._children[n].sort(key=self._pos.__getitem__)
        self._check_reachability()
        self.edge_order: tuple[EdgeId, ...] = tuple(sorted(edges, key=self.edge_key))
        self._edge_index = {e: i for i, e in enumerate(self.edge_order)}
        self.graph_id = hashlib.sha256(
            "\n".join(e.name for e in self.edge_order).encode()
        ).hexdigest()[:16]

    def _toposort(self) -> tuple[NodeId, ...]:
        indeg = {n: len(self._parents[n]) for n in self.nodes}
        heap = [(n.sort_key, n) for n in self.nodes if indeg[n] == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            _, n = heapq.heappop(heap)
            order.append(n)
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(heap, (c.sort_key, c))
        if len(order) != len(self.nodes):
            raise GraphError("graph contains a cycle")
        return tuple(order)

    def _check_reachability(self) -> None:
        seen = set()
        stack = [n for n in self.nodes if n.kind == "input"]
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(self._children[n])
        unreachable = [n for n in self.nodes if n not in seen]
        if unreachable:
            names = ", ".join(sorted(n.name for n in unreachable))
            raise GraphError(f"unreachable non-input node(s): {names}")
        reach_out = set()
        stack = [self.output]
        while stack:
            n = stack.pop()
            if n in reach_out:
                continue
            reach_out.add(n)
            stack.extend(self._parents[n])
        dead = [n for n in self.nodes if self._children[n] and n not in reach_out]
        if dead:
            raise GraphError(f"dead node(s): {', '.join(sorted(n.name for n in dead))}")

    def edge_key(self, e: EdgeId) -> tuple[int, int]:
        return (self._pos[e.receiver], self._pos[e.sender])

    def position(self, n: NodeId) -> int:
        return self._pos[n]

    def parents(self, n: NodeId) -> list[NodeId]:
        return list(self._parents[n])

    def children(self, n: NodeId) -> list[NodeId]:
        return list(self._children[n])

    def in_edges(self, n: NodeId) -> list[EdgeId]:
        return [EdgeId(p, n) for p in self._parents[n]]

    def edge_index(self, e: EdgeId) -> int:
        return self._edge_index[e]

    def node_by_name(self, name: str) -> NodeId:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def edge_by_name(self, name: str) -> EdgeId:
        s, r = name.split("->")
        e = EdgeId(self.node_by_name(s), self.node_by_name(r))
        if e not in self.edges:
            raise KeyError(name)
        return e

    def __len__(self) -> int:
        return len(self.edges)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ComputationalGraph)
            and self.nodes == other.nodes
            and self.edges == other.edges
        )

    def __hash__(self) -> int:
        return hash(self.graph_id)

    def full_circuit(self) -> "Circuit":
        return Circuit(self, self.edges)

    def empty_circuit(self) -> "Circuit":
        return Circuit(self, ())

    def circuit(self, edges: Iterable["EdgeId | str"]) -> "Circuit":
        """Circuit from edge ids or edge names."""
        return Circuit(self, (self.edge_by_name(e) if isinstance(e, str) else e for e in edges))


class Circuit:
    """A subset of a graph's edges. Immutable, hashable, set-like."""

    __slots__ = ("graph", "members")

    def __init__(self, graph: ComputationalGraph, members: Iterable[EdgeId]):
        members = frozenset(members)
        stray = members - graph.edges
        if stray:
            raise GraphError(f"edges not in graph: {sorted(e.name for e in stray)}")
        self.graph = graph
        self.members = members

    @property
    def graph_id(self) -> str:
        return self.graph.graph_id

    @property
    def sparsity_ratio(self) -> float:
        return len(self.members) / len(self.graph.edges) if self.graph.edges else 0.0

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.sorted())

    def __contains__(self, e) -> bool:
        return e in self.members

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Circuit)
            and other.graph_id == self.graph_id
            and other.members == self.members
        )

    def __hash__(self) -> int:
        return hash((self.graph_id, self.members))

    def __repr__(self) -> str:
        return f"Circuit({self.names()})"

    def sorted(self) -> list[EdgeId]:
        return sorted(self.members, key=self.graph.edge_key)

    def names(self) -> list[str]:
        """Canonical serialization: edge names in canonical edge order."""
        return [e.name for e in self.sorted()]

    def with_edges(self, edges: Iterable[EdgeId]) -> "Circuit":
        return Circuit(self.graph, self.members | frozenset(edges))

    def without(self, edges: Iterable[EdgeId]) -> "Circuit":
        return Circuit(self.graph, self.members - frozenset(edges))


def _same_graph(a: Circuit, b: Circuit) -> None:
    if a.graph_id != b.graph_id:
        raise GraphError("circuits reference different graphs")


def circuit_difference(a: Circuit, b: Circuit) -> Circuit:
    _same_graph(a, b)
    return Circuit(a.graph, a.members - b.members)


def circuit_intersection(a: Circuit, b: Circuit) -> Circuit:
    _same_graph(a, b)
    return Circuit(a.graph, a.members & b.members)


def circuit_union(a: Circuit, b: Circuit) -> Circuit:
    _same_graph(a, b)
    return Circuit(a.graph, a.members | b.members)


def circuit_complement(g: ComputationalGraph, a: Circuit) -> Circuit:
    if a.graph_id != g.graph_id:
        raise GraphError("circuit references a different graph")
    return Circuit(g, g.edges - a.members)


def hamming_distance(a: Circuit, b: Circuit) -> int:
    _same_graph(a, b)
    return len(a.members ^ b.members)


def random_subcircuit(
    c: Circuit, size_range: Sequence[int], rng: random.Random | int
) -> Circuit:
    """Uniform random member subset whose size is uniform over ``size_range``."""
    lo, hi = size_range
    if lo > hi or lo < 0:
        raise GraphError(f"invalid size range {size_range}")
    if lo > len(c):
        raise GraphError(f"size range lower bound {lo} exceeds circuit size {len(c)}")
    if hi > len(c):
        raise GraphError(f"size range upper bound {hi} exceeds circuit size {len(c)}")
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)
    size = rng.randint(lo, hi)
    return Circuit(c.graph, rng.sample(c.sorted(), size))
