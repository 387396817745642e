"""Executable edge-decomposed models: forward, patched forward, edge gradients.

Every model evaluates its graph in topological order. A receiver's input is
assembled from one value per in-edge, and each edge carries its sender's output
unless a patch mask routes the donor cache's value instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import torch

from ..graph import Circuit, ComputationalGraph, EdgeId, NodeId

DTYPE = torch.float64


@dataclass
class ActivationCache:
    """Per-node outputs and per-edge contributions for one batch.

    ``consistent`` is True when the cache is a genuine forward run (every node
    value equals its function applied to its in-edge values). Zero and noise
    ablation caches are not.
    """

    graph: ComputationalGraph
    node_values: dict[NodeId, torch.Tensor]
    edge_values: dict[EdgeId, torch.Tensor]
    output: torch.Tensor  # raw output-node value
    logits: torch.Tensor
    consistent: bool = True

    def detached(self) -> "ActivationCache":
        return ActivationCache(
            self.graph,
            {k: v.detach() for k, v in self.node_values.items()},
            {k: v.detach() for k, v in self.edge_values.items()},
            self.output.detach(),
            self.logits.detach(),
            self.consistent,
        )


@dataclass
class EdgeGradients:
    grads: dict[EdgeId, torch.Tensor]
    loss: float


class EdgeModel:
    """Base class. Subclasses supply source values, node functions and a readout."""

    graph: ComputationalGraph
    family: str

    def source_value(self, node: NodeId, inputs: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def node_fn(self, node: NodeId, values: list[torch.Tensor]) -> torch.Tensor:
        raise NotImplementedError

    def to_logits(self, output: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def encode(self, inputs) -> torch.Tensor:
        """Batch a list of raw inputs into the tensor ``source_value`` expects."""
        raise NotImplementedError

    def check_inputs(self, inputs: torch.Tensor) -> None:
        pass

    # -- evaluation ---------------------------------------------------------

    def run(
        self,
        inputs: torch.Tensor | None = None,
        *,
        base: ActivationCache | None = None,
        donor: ActivationCache | None = None,
        mask: Mapping[EdgeId, object] | None = None,
        deltas: Mapping[EdgeId, torch.Tensor] | None = None,
        reuse: tuple[ActivationCache, int] | None = None,
    ) -> ActivationCache:
        """Evaluate the graph.

        Without ``base`` this is a clean forward on ``inputs``. With ``base``,
        source nodes take the base cache's values and every edge with mask
        value ``m`` carries ``m * sender_value + (1 - m) * donor_edge_value``
        (``m`` may be a float or a differentiable tensor; missing edges count
        as 1). ``reuse=(cache, pos)`` copies node values for topological
        positions below ``pos`` from a run whose patch agrees there.

        Against an inconsistent base (zero/noise ablation) a node whose in-edge
        values all equal the base's keeps its base value; gradients still flow
        through the node function at that point.
        """
        if base is None:
            if inputs is None:
                raise ValueError("inputs or base cache required")
            self.check_inputs(inputs)
        if mask is not None and donor is None:
            raise ValueError("a mask requires a donor cache")
        g = self.graph
        node_vals: dict[NodeId, torch.Tensor] = {}
        edge_vals: dict[EdgeId, torch.Tensor] = {}
        start = 0
        if reuse is not None:
            prev, start = reuse
            for n in g.topo[:start]:
                node_vals[n] = prev.node_values[n]
                for e in g.in_edges(n):
                    edge_vals[e] = prev.edge_values[e]
        for n in g.topo[start:]:
            in_edges = g.in_edges(n)
            if not in_edges:
                node_vals[n] = base.node_values[n] if base is not None else self.source_value(n, inputs)
                continue
            vals = []
            for e in in_edges:
                v = node_vals[e.sender]
                if mask is not None:
                    m = mask.get(e, 1.0)
                    if isinstance(m, torch.Tensor):
                        v = m * v + (1 - m) * donor.edge_values[e]
                    elif m == 0.0:
                        v = donor.edge_values[e]
                    elif m != 1.0:
                        v = m * v + (1 - m) * donor.edge_values[e]
                if deltas is not None and e in deltas:
                    v = v + deltas[e]
                edge_vals[e] = v
                vals.append(v)
            if base is not None and not base.consistent and all(
                torch.equal(v, base.edge_values[e]) for v, e in zip(vals, in_edges)
            ):
                val = base.node_values[n]
                if torch.is_grad_enabled() and any(v.requires_grad for v in vals):
                    f = self.node_fn(n, vals)
                    val = val + (f - f.detach())
                node_vals[n] = val
            else:
                node_vals[n] = self.node_fn(n, vals)
        out = node_vals[g.output]
        return ActivationCache(g, node_vals, edge_vals, out, self.to_logits(out), True)

    def forward(self, inputs) -> tuple[torch.Tensor, ActivationCache]:
        if not isinstance(inputs, torch.Tensor):
            inputs = self.encode(inputs)
        with torch.no_grad():
            cache = self.run(inputs)
        return cache.logits, cache

    def forward_patched(
        self, base: ActivationCache, donor: ActivationCache, retained: Circuit
    ) -> torch.Tensor:
        """Retained edges keep the base side; all others carry donor values."""
        return self.patched_cache(base, donor, retained).logits

    def patched_cache(
        self, base: ActivationCache, donor: ActivationCache, retained: Circuit
    ) -> ActivationCache:
        if base.graph is not self.graph and base.graph != self.graph:
            raise ValueError("base cache belongs to a different graph")
        if donor.graph != self.graph or retained.graph_id != self.graph.graph_id:
            raise ValueError("donor cache or circuit belongs to a different graph")
        mask = {e: (1.0 if e in retained.members else 0.0) for e in self.graph.edges}
        with torch.no_grad():
            return self.run(base=base, donor=donor, mask=mask)

    def edge_gradients(
        self,
        loss_fn: Callable[[ActivationCache], torch.Tensor],
        inputs: torch.Tensor | None = None,
        *,
        base: ActivationCache | None = None,
        donor: ActivationCache | None = None,
    ) -> EdgeGradients:
        """d(loss)/d(edge value) for every edge, from one backward sweep.

        Evaluated at the clean forward on ``inputs`` or, with ``base`` and
        ``donor``, at the unpatched base run (all edges on the base side).
        """
        if getattr(loss_fn, "differentiable", True) is False:
            raise ValueError("loss is not differentiable")
        if base is None and inputs is None:
            raise ValueError("inputs or base cache required")
        with torch.no_grad():
            probe = self.run(inputs, base=base, donor=donor)
        deltas = {
            e: torch.zeros_like(probe.edge_values[e], requires_grad=True)
            for e in self.graph.edge_order
        }
        with torch.enable_grad():
            cache = self.run(inputs, base=base, donor=donor, deltas=deltas)
            loss = loss_fn(cache)
            if not isinstance(loss, torch.Tensor) or not loss.requires_grad:
                grads = {e: torch.zeros_like(d) for e, d in deltas.items()}
                return EdgeGradients(grads, float(loss))
            got = torch.autograd.grad(
                loss, [deltas[e] for e in self.graph.edge_order], allow_unused=True
            )
        grads = {
            e: (gr if gr is not None else torch.zeros_like(deltas[e]))
            for e, gr in zip(self.graph.edge_order, got)
        }
        return EdgeGradients(grads, float(loss.detach()))

    def loss_at(
        self,
        loss_fn: Callable[[ActivationCache], torch.Tensor],
        deltas: Mapping[EdgeId, torch.Tensor],
        inputs: torch.Tensor | None = None,
        *,
        base: ActivationCache | None = None,
        donor: ActivationCache | None = None,
    ) -> float:
        """Loss with fixed perturbations added to edge values (finite-difference probe)."""
        with torch.no_grad():
            cache = self.run(inputs, base=base, donor=donor, deltas=deltas)
            return float(loss_fn(cache))
