"""Faithfulness, completeness, randomness, gate effects, and the exhaustive
minimal-subset oracle."""

from __future__ import annotations

import itertools
import random
import statistics
from dataclasses import asdict, dataclass, field

import torch

from .graph import Circuit, hamming_distance, random_subcircuit
from .intervention import (
    PatchContext,
    circuit_accuracy,
    circuit_distance,
    circuits_distance,
    normalize_metric,
)

ORACLE_MAX_EDGES = 14


class EvaluationError(ValueError):
    pass


def _complement(ctx: PatchContext, c: Circuit) -> Circuit:
    return ctx.graph.circuit(set(ctx.graph.edges) - c.members)


def faithfulness(ctx: PatchContext, circuit: Circuit, metric: str = "kl") -> dict:
    """Distance of the circuit's noising run from the full model, plus its accuracy."""
    return {
        "kl": circuit_distance(ctx, circuit, "Ns", metric),
        "accuracy": circuit_accuracy(ctx, circuit, "Ns") if ctx.has_labels else None,
    }


def completeness(ctx: PatchContext, circuit: Circuit, metric: str = "kl") -> dict:
    """Degradation when the circuit is removed (everything else kept clean)."""
    rest = _complement(ctx, circuit)
    return {
        "kl_of_removal": circuit_distance(ctx, rest, "Ns", metric),
        "accuracy_of_removal": circuit_accuracy(ctx, rest, "Ns") if ctx.has_labels else None,
    }


def incompleteness_sampled(
    ctx: PatchContext, circuit: Circuit, n_samples: int = 30, size_range=(2, 5), seed: int = 0,
    metric: str = "kl",
) -> dict:
    """Mean and std over random K of D(C minus K || G minus K); lower is better."""
    if n_samples < 1:
        raise EvaluationError("n_samples must be >= 1")
    if len(circuit) < size_range[1]:
        raise EvaluationError(
            f"circuit too small: {len(circuit)} edges, sampling needs {size_range[1]}"
        )
    rng = random.Random(f"incompleteness|{seed}")
    full = ctx.graph.full_circuit()
    vals = []
    for _ in range(n_samples):
        k = random_subcircuit(circuit, size_range, rng)
        vals.append(circuits_distance(ctx, circuit.without(k), full.without(k), "Ns", metric))
    return {
        "mean": statistics.fmean(vals),
        "std": statistics.pstdev(vals) if len(vals) > 1 else 0.0,
        "samples": n_samples,
    }


def hamming_stats(circuits: list[Circuit]) -> dict:
    if len(circuits) < 2:
        raise EvaluationError("need at least two runs")
    d = [hamming_distance(a, b) for a, b in itertools.combinations(circuits, 2)]
    return {"mean_hamming": statistics.fmean(d), "std": statistics.pstdev(d), "run_count": len(circuits)}


def randomness(ctx: PatchContext, config, k: int, seeds) -> dict:
    """Pairwise Hamming distance between circuits discovered under different seeds."""
    from .discovery import discover

    seeds = list(seeds)
    if len(seeds) < 2:
        raise EvaluationError("run-count must be >= 2")
    if len(set(seeds)) != len(seeds):
        raise EvaluationError("seeds must differ")
    circuits = [discover(ctx, config.with_(k=k, seed=s)).circuit for s in seeds]
    return hamming_stats(circuits)


def gate_effects(ctx: PatchContext, gates, metric: str = "kl") -> list[dict]:
    """Distance caused by ablating each gate's edges together; edge effect splits it evenly."""
    if not gates:
        raise EvaluationError("empty gate list")
    full = ctx.graph.full_circuit()
    out = []
    for gate in gates:
        effect = circuit_distance(ctx, full.without(gate.edges), "Ns", metric)
        out.append({
            "receiver": gate.receiver.name,
            "label": gate.label,
            "size": len(gate),
            "gate_effect": effect,
            "edge_effect": effect / len(gate),
        })
    return out


def proportions(labeling) -> dict[str, int]:
    counts = {"AND": 0, "OR": 0, "ADDER": 0}
    for lab in labeling.labels.values():
        counts[lab] += 1
    return counts


# -- exhaustive oracle -------------------------------------------------------

@dataclass
class OracleResult:
    circuit: Circuit
    ties: int
    value: float
    mode: str


def _local_removal(ctx: PatchContext, removed: frozenset) -> float:
    """Sum over receivers of |value change| when the removed in-edges carry donor
    values and all other in-edges carry full-model values.

    Each receiver is judged on its own inputs, so a downstream sink that is
    already dead cannot mask what happens upstream.
    """
    model, clean, donor = ctx.model, ctx.clean, ctx.corrupt
    total = 0.0
    for n in ctx.graph.topo:
        edges = ctx.graph.in_edges(n)
        if not edges or not any(e in removed for e in edges):
            continue
        vals = [donor.edge_values[e] if e in removed else clean.edge_values[e] for e in edges]
        total += float((model.node_fn(n, vals) - clean.node_values[n]).abs().mean())
    return total


def minimal_subset_oracle(
    ctx: PatchContext, metric: str = "sink", mode: str = "faithful", eps: float = 1e-9
) -> OracleResult:
    """Smallest edge subset that is optimally faithful or optimally complete.

    faithful: noising-run distance to the full model within eps of 0.
    complete: removal effect (per receiver, see ``_local_removal``) within eps
    of the maximum over all subsets. Ties are counted; the first subset in
    canonical edge order is returned.
    """
    g = ctx.graph
    n = len(g.edges)
    if n > ORACLE_MAX_EDGES:
        raise EvaluationError(f"graph too large for enumeration: {n} edges > {ORACLE_MAX_EDGES}")
    if mode not in ("faithful", "complete"):
        raise EvaluationError(f"unknown oracle mode {mode!r}")
    metric = normalize_metric(metric)
    order = g.edge_order
    with torch.no_grad():
        if mode == "faithful":
            for size in range(n + 1):
                hits = [
                    combo for combo in itertools.combinations(order, size)
                    if circuit_distance(ctx, g.circuit(combo), "Ns", metric) <= eps
                ]
                if hits:
                    best = g.circuit(hits[0])
                    return OracleResult(best, len(hits), circuit_distance(ctx, best, "Ns", metric), mode)
            raise EvaluationError("no faithful subset found")  # unreachable: the full graph is faithful
        scored = {
            combo: _local_removal(ctx, frozenset(combo))
            for size in range(n + 1)
            for combo in itertools.combinations(order, size)
        }
    top = max(scored.values())
    for size in range(n + 1):
        hits = [c for c in itertools.combinations(order, size) if scored[c] >= top - eps]
        if hits:
            return OracleResult(g.circuit(hits[0]), len(hits), top, mode)
    raise EvaluationError("no complete subset found")


# -- report ------------------------------------------------------------------

@dataclass
class EvalReport:
    faithfulness: dict | None = None
    completeness: dict | None = None
    incompleteness_sampled: dict | None = None
    randomness: dict | None = None
    gate_stats: list | None = None
    proportions: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v not in (None, {}, [])}


def box_ablation(ctx: PatchContext, gates, repeats: int = 30, seed: int = 0, metric: str = "sink") -> list[dict]:
    """Remove one or two random in-edges of each gate, ``repeats`` times per receiver.

    ``gates`` is an iterable of (receiver, label, edges); gates with fewer than
    two edges are skipped. Rows carry the noising-run distance for each draw.
    """
    full = ctx.graph.full_circuit()
    rows = []
    for receiver, label, edges in gates:
        edges = sorted(edges, key=lambda e: e.name)
        if len(edges) < 2:
            continue
        rng = random.Random(f"box|{seed}|{receiver.name}")
        for r in range(repeats):
            for n_removed in (1, 2):
                drop = rng.sample(edges, n_removed)
                rows.append({
                    "label": label,
                    "receiver": receiver.name,
                    "edges_removed": n_removed,
                    "repeat": r,
                    "delta": circuit_distance(ctx, full.without(drop), "Ns", metric),
                })
    return rows


def box_summary(rows: list[dict]) -> dict[str, dict[str, float]]:
    """Mean Δ for one and two removed edges, per receiver."""
    out: dict[str, dict[str, float]] = {}
    for key in sorted({(r["receiver"], r["label"]) for r in rows}):
        d1 = [r["delta"] for r in rows if (r["receiver"], r["label"]) == key and r["edges_removed"] == 1]
        d2 = [r["delta"] for r in rows if (r["receiver"], r["label"]) == key and r["edges_removed"] == 2]
        out[key[0]] = {"label": key[1], "delta1": statistics.fmean(d1), "delta2": statistics.fmean(d2)}
    return out
