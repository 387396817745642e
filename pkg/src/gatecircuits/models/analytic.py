"""Analytic models: logic-gate networks and the one-layer gate toys."""

from __future__ import annotations

import torch

from ..graph import ComputationalGraph, GraphError, NodeId
from .base import DTYPE, EdgeModel
from .spec import GATE_KINDS, ModelSpec, build_graph


def _sum(values: list[torch.Tensor]) -> torch.Tensor:
    out = values[0]
    for v in values[1:]:
        out = out + v
    return out


def _relu(x: torch.Tensor) -> torch.Tensor:
    # derivative 1 at the kink, so a unit sitting exactly at 0 still reports
    # its first-order sensitivity to an increase
    return torch.where(x >= 0, x, torch.zeros_like(x))


def scalar_logits(v: torch.Tensor) -> torch.Tensor:
    """Sink value v -> two-way logits [v, 0]."""
    return torch.stack([v, torch.zeros_like(v)], dim=-1)


class GateNetwork(EdgeModel):
    """Source nodes carry 1 (clean) or 0 (corrupted); AND = min, OR = max,
    ADDER = sum over in-edge values; the output node sums its inputs."""

    family = "gate-network"

    def __init__(self, spec: ModelSpec):
        if spec.family != "gate-network":
            raise GraphError("spec is not a gate network")
        self.spec = spec
        self.graph = build_graph(spec)
        self.kinds = {g.node: g.gate for g in spec.gates}
        for n, k in self.kinds.items():
            if k not in GATE_KINDS:
                raise GraphError(f"unknown gate kind {k!r}")
        self.sources: list[NodeId] = [n for n in self.graph.topo if n.kind == "input"]
        self._col = {n: i for i, n in enumerate(self.sources)}

    def encode(self, inputs) -> torch.Tensor:
        t = torch.as_tensor(inputs, dtype=DTYPE)
        if t.dim() == 1:
            t = t.unsqueeze(0)
        return t

    def check_inputs(self, inputs: torch.Tensor) -> None:
        if inputs.dim() != 2 or inputs.shape[1] != len(self.sources):
            raise ValueError(
                f"expected inputs of shape (batch, {len(self.sources)}), got {tuple(inputs.shape)}"
            )

    def source_value(self, node, inputs):
        return inputs[:, self._col[node]]

    def node_fn(self, node, values):
        if node.kind == "output":
            return _sum(values)
        kind = self.kinds[node]
        if kind == "ADDER" or len(values) == 1:
            return _sum(values)
        stacked = torch.stack(values, dim=0)
        if kind == "AND":
            return torch.amin(stacked, dim=0)
        return torch.amax(stacked, dim=0)

    def to_logits(self, output):
        return scalar_logits(output)

    def clean_inputs(self) -> torch.Tensor:
        return torch.ones(1, len(self.sources), dtype=DTYPE)


class GateToy(EdgeModel):
    """One layer, two heads, model dimension 1, zero input.

    Heads output their biases; the MLP ``m`` implements the gate:
    AND ``relu(x - 1)``, OR ``1 - relu(1 - x)``, ADDER ``relu(x)``.
    """

    family = "toy-transformer"

    def __init__(self, spec: ModelSpec):
        if spec.family != "toy-transformer":
            raise GraphError("spec is not a toy transformer")
        self.spec = spec
        self.kind = spec.toy_gate
        self.graph = build_graph(spec)
        self.biases = {
            NodeId("attention-head", 0, 0): spec.bias1,
            NodeId("attention-head", 0, 1): spec.bias2,
        }

    def encode(self, inputs) -> torch.Tensor:
        t = torch.as_tensor(inputs, dtype=DTYPE)
        if t.dim() == 1:
            t = t.unsqueeze(-1)
        return t

    def check_inputs(self, inputs):
        if inputs.dim() != 2 or inputs.shape[1] != 1:
            raise ValueError(f"expected inputs of shape (batch, 1), got {tuple(inputs.shape)}")

    def source_value(self, node, inputs):
        return inputs[:, 0]

    def node_fn(self, node, values):
        x = _sum(values)
        if node.kind == "attention-head":
            return self.biases[node] + 0.0 * x
        if node.kind == "mlp":
            if self.kind == "AND":
                return _relu(x - 1.0)
            if self.kind == "OR":
                return 1.0 - _relu(1.0 - x)
            return _relu(x)
        return x

    def to_logits(self, output):
        return scalar_logits(output)

    def clean_inputs(self) -> torch.Tensor:
        return torch.zeros(1, 1, dtype=DTYPE)


def make_gate_toy(kind: str, **bias_overrides) -> tuple[ModelSpec, ComputationalGraph]:
    """Spec and graph of the one-layer toy for ``kind``.

    AND/OR use biases (1, 1); ADDER uses (1, 1.5).
    """
    if kind not in GATE_KINDS:
        raise GraphError(f"unknown gate kind {kind!r}")
    bias2 = 1.5 if kind == "ADDER" else 1.0
    spec = ModelSpec(
        "toy-transformer",
        toy_gate=kind,
        bias1=bias_overrides.get("bias1", 1.0),
        bias2=bias_overrides.get("bias2", bias2),
    )
    return spec, build_graph(spec)


def make_gate_network(spec: ModelSpec) -> EdgeModel:
    if spec.family == "gate-network":
        return GateNetwork(spec)
    if spec.family == "toy-transformer":
        return GateToy(spec)
    raise GraphError(f"family {spec.family!r} is not analytic")
