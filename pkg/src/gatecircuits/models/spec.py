"""Model specifications and the graphs they induce."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from ..graph import ComputationalGraph, EdgeId, GraphError, NodeId

GATE_KINDS = ("AND", "OR", "ADDER")
FAMILIES = ("gate-network", "toy-transformer", "trained-transformer")


@dataclass(frozen=True)
class GateSpec:
    node: NodeId
    gate: str
    parents: tuple[NodeId, ...] = ()


@dataclass(frozen=True)
class ModelSpec:
    family: str
    gates: tuple[GateSpec, ...] = ()
    # toy-transformer
    toy_gate: str = "AND"
    bias1: float = 1.0
    bias2: float = 1.0
    # trained-transformer
    layers: int = 2
    heads: int = 4
    d_model: int = 32
    d_mlp: int = 64
    vocab_size: int = 20
    seq_len: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise GraphError(f"unknown model family {self.family!r}")
        if self.family == "toy-transformer":
            if self.toy_gate not in GATE_KINDS:
                raise GraphError(f"unknown gate kind {self.toy_gate!r}")
            if not (math.isfinite(self.bias1) and math.isfinite(self.bias2)):
                raise GraphError("biases must be finite")
        if self.family == "trained-transformer":
            for name in ("layers", "heads", "d_model", "d_mlp", "vocab_size", "seq_len"):
                if getattr(self, name) < 1:
                    raise GraphError(f"{name} must be >= 1")
        for g in self.gates:
            if g.gate not in GATE_KINDS:
                raise GraphError(f"unknown gate kind {g.gate!r}")

    def to_dict(self) -> dict:
        d = {"family": self.family}
        if self.family == "gate-network":
            d["gates"] = [
                {"node": g.node.name, "gate": g.gate, "parents": [p.name for p in g.parents]}
                | ({"layer": g.node.layer} if g.node.kind == "output" else {})
                for g in self.gates
            ]
        elif self.family == "toy-transformer":
            d.update(toy_gate=self.toy_gate, bias1=self.bias1, bias2=self.bias2)
        else:
            for k in ("layers", "heads", "d_model", "d_mlp", "vocab_size", "seq_len", "seed"):
                d[k] = getattr(self, k)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        family = d.pop("family")
        if family == "gate-network":
            gates = []
            for g in d.pop("gates", []):
                node = parse_node_name(g["node"])
                if node.kind == "output":
                    node = NodeId("output", int(g.get("layer", 0)))
                gates.append(
                    GateSpec(
                        node,
                        g.get("gate", "ADDER"),
                        tuple(parse_node_name(p) for p in g.get("parents", [])),
                    )
                )
            return cls(family, gates=tuple(gates), **d)
        return cls(family, **d)


def parse_node_name(name: str) -> NodeId:
    if name == "out":
        return NodeId("output", 0, 0)
    if name.startswith("in"):
        return NodeId("input", 0, int(name[2:]))
    if name.startswith("a"):
        layer, idx = name[1:].split(".")
        return NodeId("attention-head", int(layer), int(idx))
    if name.startswith("m"):
        return NodeId("mlp", int(name[1:]), 0)
    if name.startswith("g"):
        layer, idx = name[1:].split(".")
        return NodeId("gate-node", int(layer), int(idx))
    raise GraphError(f"cannot parse node name {name!r}")


def build_graph(spec: ModelSpec) -> ComputationalGraph:
    """Graph induced by a model spec. Pure: equal specs give equal graphs."""
    if spec.family == "gate-network":
        return _gate_graph(spec)
    if spec.family == "toy-transformer":
        return _toy_graph()
    return _transformer_graph(spec.layers, spec.heads)


def _gate_graph(spec: ModelSpec) -> ComputationalGraph:
    nodes, edges = set(), set()
    for g in spec.gates:
        if g.node in nodes:
            raise GraphError(f"duplicate node {g.node.name}")
        for p in g.parents:
            if p not in nodes:
                raise GraphError(f"{g.node.name}: parent {p.name} is not an earlier node")
            edges.add(EdgeId(p, g.node))
        nodes.add(g.node)
    return ComputationalGraph(nodes, edges)


def _toy_graph() -> ComputationalGraph:
    inp = NodeId("input")
    a1, a2 = NodeId("attention-head", 0, 0), NodeId("attention-head", 0, 1)
    m, out = NodeId("mlp", 0), NodeId("output", 1)
    edges = [EdgeId(inp, a1), EdgeId(inp, a2), EdgeId(a1, m), EdgeId(a2, m), EdgeId(m, out)]
    return ComputationalGraph([inp, a1, a2, m, out], edges)


def transformer_components(layers: int, heads: int) -> list[tuple[NodeId, int]]:
    """Residual-stream components with their stage index (senders precede receivers)."""
    comps = [(NodeId("input"), 0)]
    for layer in range(layers):
        comps += [(NodeId("attention-head", layer, h), 2 * layer + 1) for h in range(heads)]
        comps.append((NodeId("mlp", layer), 2 * layer + 2))
    comps.append((NodeId("output", layers), 2 * layers + 1))
    return comps


def _transformer_graph(layers: int, heads: int) -> ComputationalGraph:
    comps = transformer_components(layers, heads)
    edges = [
        EdgeId(s, r) for s, ss in comps for r, rs in comps if ss < rs
    ]
    return ComputationalGraph([c for c, _ in comps], edges)


# -- canned gate networks ---------------------------------------------------

def _src(i: int) -> GateSpec:
    return GateSpec(NodeId("input", 0, i), "ADDER")


def mixed_spec() -> ModelSpec:
    """A1 AND A2 -> B1, A3 OR A4 -> B2, B1 + B2 -> C, C -> out."""
    a = [NodeId("input", 0, i) for i in range(4)]
    b1, b2 = NodeId("gate-node", 1, 0), NodeId("gate-node", 1, 1)
    c = NodeId("gate-node", 2, 0)
    gates = [_src(i) for i in range(4)] + [
        GateSpec(b1, "AND", (a[0], a[1])),
        GateSpec(b2, "OR", (a[2], a[3])),
        GateSpec(c, "ADDER", (b1, b2)),
        GateSpec(NodeId("output", 3), "ADDER", (c,)),
    ]
    return ModelSpec("gate-network", gates=tuple(gates))


@dataclass
class PlantedNetwork:
    spec: ModelSpec
    kinds: dict[NodeId, str] = field(default_factory=dict)  # receiver -> planted gate kind


def planted_network(
    gate_kinds: list[str], sizes: list[int], top: str = "ADDER"
) -> PlantedNetwork:
    """Two-level planted network: disjoint sources feed one gate per entry of
    ``gate_kinds``; all gates feed a single ``top`` combiner that drives out."""
    if len(gate_kinds) != len(sizes):
        raise GraphError("gate_kinds and sizes must align")
    gates, kinds, mids = [], {}, []
    src = 0
    for gi, (kind, size) in enumerate(zip(gate_kinds, sizes)):
        parents = []
        for _ in range(size):
            gates.append(_src(src))
            parents.append(NodeId("input", 0, src))
            src += 1
        node = NodeId("gate-node", 1, gi)
        mids.append(GateSpec(node, kind, tuple(parents)))
        kinds[node] = kind
    top_node = NodeId("gate-node", 2, 0)
    gates += mids
    gates.append(GateSpec(top_node, top, tuple(g.node for g in mids)))
    kinds[top_node] = top
    gates.append(GateSpec(NodeId("output", 3), "ADDER", (top_node,)))
    return PlantedNetwork(ModelSpec("gate-network", gates=tuple(gates)), kinds)


def random_planted_network(rng: random.Random, max_edges: int = 12) -> PlantedNetwork:
    """Random planted network with at least one AND, OR and ADDER gate."""
    while True:
        n_gates = rng.randint(3, 4)
        kinds = ["AND", "OR", "ADDER"] + [rng.choice(GATE_KINDS) for _ in range(n_gates - 3)]
        rng.shuffle(kinds)
        sizes = [rng.randint(2, 3) for _ in kinds]
        if sum(sizes) + n_gates + 1 <= max_edges:
            return planted_network(kinds, sizes)
