"""Executable acceptance checks, one function per criterion.

Each check returns a ``CriterionResult`` whose ``details`` hold only
deterministic quantities; elapsed time is kept apart so that reports built
from the results are byte-stable.
"""

from __future__ import annotations

import math
import random
import statistics
import time
from dataclasses import dataclass, field

import torch

from .discovery import DiscoveryConfig, discover, mask_scores, select_top_k, combine_masks
from .evaluation import (
    box_ablation,
    box_summary,
    completeness,
    faithfulness,
    hamming_stats,
    incompleteness_sampled,
    minimal_subset_oracle,
)
from .gates import SamplerConfig, ratio_sweep
from .intervention import PatchContext, scoring_loss
from .models.analytic import make_gate_network, make_gate_toy
from .models.spec import ModelSpec, mixed_spec, planted_network, random_planted_network
from .models.tasks import TaskDataset, TaskPair, gate_dataset, make_task

TOY_DATASET = TaskDataset("gate-toy", (TaskPair((0.0,), (0.0,)),))
GATES = ("AND", "OR", "ADDER")
ALGOS = ("greedy", "linear", "mask")

# Head edges recovered per (strategy, gate, algorithm): 2 = both, 1 = exactly one, 0 = none.
RECOVERY_EXPECTED = {
    ("Ns", "AND"): {"greedy": 2, "linear": 2, "mask": 2},
    ("Ns", "OR"): {"greedy": 1, "linear": 0, "mask": 1},
    ("Ns", "ADDER"): {"greedy": 2, "linear": 2, "mask": 2},
    ("Dn", "AND"): {"greedy": 1, "linear": 0, "mask": 1},
    ("Dn", "OR"): {"greedy": 2, "linear": 2, "mask": 2},
    ("Dn", "ADDER"): {"greedy": 2, "linear": 2, "mask": 2},
}
SYMBOL = {2: "full", 1: "partial", 0: "none"}


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number}: {self.name} - {self.summary}"

    def to_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "summary": self.summary, "details": self.details}


def toy_context(kind: str, **bias_overrides) -> PatchContext:
    spec, _ = make_gate_toy(kind, **bias_overrides)
    return PatchContext(make_gate_network(spec), TOY_DATASET)


def network_context(spec: ModelSpec) -> PatchContext:
    model = make_gate_network(spec)
    return PatchContext(model, gate_dataset(len(model.sources)))


# -- 1: recovery matrix ----------------------------------------------------------

def check_recovery_matrix(seed: int = 0, bias_overrides: dict | None = None) -> CriterionResult:
    """Head edges kept by each algorithm on each toy, at tau=0.1 in sink units.

    ``bias_overrides`` maps a gate kind to toy bias overrides (negative control).
    """
    bias_overrides = bias_overrides or {}
    cells, diffs = {}, []
    for kind in GATES:
        ctx = toy_context(kind, **bias_overrides.get(kind, {}))
        for strategy in ("Ns", "Dn"):
            for algo in ALGOS:
                res = discover(ctx, DiscoveryConfig(algo, strategy, tau=0.1, metric="sink", seed=seed))
                heads = sorted(e.name for e in res.circuit if e.receiver.kind == "mlp")
                want = RECOVERY_EXPECTED[(strategy, kind)][algo]
                key = f"{strategy}/{kind}/{algo}"
                cells[key] = {"heads": heads, "got": SYMBOL[len(heads)], "expected": SYMBOL[want]}
                if len(heads) != want:
                    diffs.append(f"{key}: expected {SYMBOL[want]}, got {SYMBOL[len(heads)]} {heads}")
    ok = 18 - len(diffs)
    summary = f"{ok}/18 cells match" + ("" if not diffs else "; " + "; ".join(diffs))
    return CriterionResult(1, "recovery matrix on the gate toys", not diffs, summary, {"cells": cells})


# -- 2: ADDER outputs ------------------------------------------------------------

ADDER_EXPECTED = {"full": 2.5, "drop a0.0": 1.5, "drop a0.1": 1.0, "drop both": 0.0}


def check_adder_outputs() -> CriterionResult:
    ctx = toy_context("ADDER")
    g = ctx.graph
    full = g.full_circuit()
    heads = {"a0.0": g.edge_by_name("a0.0->m0"), "a0.1": g.edge_by_name("a0.1->m0")}
    states = {
        "full": full,
        "drop a0.0": full.without([heads["a0.0"]]),
        "drop a0.1": full.without([heads["a0.1"]]),
        "drop both": full.without(heads.values()),
    }
    got = {name: float(ctx.patched(c, "Ns").output[0]) for name, c in states.items()}
    err = max(abs(got[k] - v) for k, v in ADDER_EXPECTED.items())
    summary = " / ".join(f"{got[k]:g}" for k in ADDER_EXPECTED) + f" (max error {err:.1e})"
    return CriterionResult(2, "ADDER toy patched outputs", err <= 1e-9, summary, {"outputs": got, "max_error": err})


# -- 3: minimal-subset oracle ----------------------------------------------------

def _oracle_expectation(ctx: PatchContext, kinds: dict, circuit, mode: str) -> list[str]:
    """Violations of the expected shape; receivers without a planted kind sum their inputs."""
    full_kind, one_kind = ("AND", "OR") if mode == "faithful" else ("OR", "AND")
    problems = []
    for n in ctx.graph.topo:
        edges = ctx.graph.in_edges(n)
        if not edges:
            continue
        kind = kinds.get(n, "ADDER")
        kept = sum(e in circuit for e in edges)
        if kind in (full_kind, "ADDER") and kept != len(edges):
            problems.append(f"{n.name} ({kind}) keeps {kept}/{len(edges)}")
        if kind == one_kind and kept != 1:
            problems.append(f"{n.name} ({kind}) keeps {kept}, expected exactly 1")
    return problems


def check_oracle(seed: int = 0, networks: int = 5) -> CriterionResult:
    spec = mixed_spec()
    cases = [("mixed", spec, {g.node: g.gate for g in spec.gates if g.parents and g.node.kind != "output"})]
    rng = random.Random(f"oracle-networks|{seed}")
    for i in range(networks):
        pn = random_planted_network(rng)
        cases.append((f"planted-{i}", pn.spec, pn.kinds))
    details, problems = {}, []
    for name, spec, kinds in cases:
        ctx = network_context(spec)
        entry = {"edges": len(ctx.graph.edges)}
        for mode in ("faithful", "complete"):
            r = minimal_subset_oracle(ctx, "sink", mode)
            bad = _oracle_expectation(ctx, kinds, r.circuit, mode)
            entry[mode] = {"circuit": r.circuit.names(), "ties": r.ties}
            problems += [f"{name}/{mode}: {b}" for b in bad]
        or_sizes = [len(ctx.graph.in_edges(n)) for n, k in kinds.items() if k == "OR"]
        entry["expected_faithful_ties"] = math.prod(or_sizes)
        if entry["faithful"]["ties"] != entry["expected_faithful_ties"]:
            problems.append(f"{name}: {entry['faithful']['ties']} faithful ties, expected {entry['expected_faithful_ties']}")
        details[name] = entry
    summary = f"{len(cases)} networks, " + ("all subsets and tie counts as predicted" if not problems else "; ".join(problems))
    return CriterionResult(3, "minimal-subset oracle", not problems, summary, details)


# -- 4: gradient check -------------------------------------------------------------

def reference_transformer():
    """The 2-layer, 4-head, width-32 induction model (trained once, then cached)."""
    from .models.transformer import TrainConfig, cached_trained_transformer

    return cached_trained_transformer(ModelSpec("trained-transformer", seed=0), TrainConfig())


def check_gradients(seed: int = 0, probes: int = 100, h: float = 1e-5, model=None) -> CriterionResult:
    """Directional central differences against ``edge_gradients``.

    Every edge is probed at least once; the remaining probes revisit random
    edges along fresh random directions.
    """
    model = model or reference_transformer()
    ctx = PatchContext(model, make_task("induction", {"n": 16}, seed=derive(seed, "grad-data")))
    loss = scoring_loss(ctx, "logitdiff", "Ns")
    inputs = model.encode(ctx.dataset.clean_inputs())
    grads = model.edge_gradients(loss, inputs).grads
    rng = random.Random(f"grad|{seed}")
    edges = list(model.graph.edge_order)
    rng.shuffle(edges)
    picks = edges + [rng.choice(model.graph.edge_order) for _ in range(max(0, probes - len(edges)))]
    gen = torch.Generator().manual_seed(derive(seed, "grad-dirs"))
    worst, worst_edge = 0.0, None
    for e in picks:
        u = torch.randn(grads[e].shape, generator=gen, dtype=grads[e].dtype)
        u = u / u.norm()
        plus = model.loss_at(loss, {e: h * u}, inputs)
        minus = model.loss_at(loss, {e: -h * u}, inputs)
        numeric = (plus - minus) / (2 * h)
        analytic = float((grads[e] * u).sum())
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
        if rel > worst:
            worst, worst_edge = rel, e.name
    summary = f"{len(picks)} probes over {len(edges)} edges, max relative error {worst:.2e}"
    return CriterionResult(4, "edge gradients vs finite differences", worst < 1e-4, summary,
                           {"probes": len(picks), "edges": len(edges), "max_rel_error": worst, "worst_edge": worst_edge})


def derive(seed: int, *parts) -> int:
    from .harness import derive_seed

    return derive_seed(seed, *parts)


# -- 5: one- vs two-edge ablation ----------------------------------------------------

def box_networks(seed: int = 0, extra: int = 3):
    nets = [
        planted_network(["AND", "OR", "ADDER"] * 3, [2] * 9),
        planted_network(["AND", "OR", "ADDER"] * 2, [2, 2, 2, 3, 3, 3], top="ADDER"),
    ]
    rng = random.Random(f"box-networks|{seed}")
    return nets + [random_planted_network(rng) for _ in range(extra)]


def box_pattern_ok(label: str, d1: float, d2: float) -> bool:
    if label == "AND":
        return d1 >= 0.9 * d2
    if label == "OR":
        return d1 <= 0.05 * d2
    return d2 >= 1.5 * d1 > 0


def check_box_ablation(seed: int = 0, repeats: int = 30) -> CriterionResult:
    details, problems, n_gates = {}, [], 0
    for i, pn in enumerate(box_networks(seed)):
        ctx = network_context(pn.spec)
        gates = [(n, kind, ctx.graph.in_edges(n))
                 for n, kind in sorted(pn.kinds.items(), key=lambda kv: ctx.graph.position(kv[0]))]
        summ = box_summary(box_ablation(ctx, gates, repeats, derive(seed, "box", i), "sink"))
        details[f"network-{i}"] = summ
        for recv, s in summ.items():
            n_gates += 1
            if not box_pattern_ok(s["label"], s["delta1"], s["delta2"]):
                problems.append(f"network-{i}/{recv} ({s['label']}): d1={s['delta1']:.3g} d2={s['delta2']:.3g}")
    summary = f"{n_gates} gates, " + ("all follow the AND/OR/ADDER pattern" if not problems else "; ".join(problems))
    return CriterionResult(5, "one- vs two-edge ablation pattern", not problems, summary, details)


# -- 6: orderings on the trained transformer ---------------------------------------

TRANSFORMER_K = 5  # about 90% sparsity on the 54-edge graph


def _strategy_circuits(ctx, algo: str, k: int, seed: int) -> dict:
    return {s: discover(ctx, DiscoveryConfig(algo, s, k=k, metric="kl", seed=seed)).circuit
            for s in ("Ns", "Dn", "NsDn")}


def check_orderings(seed: int = 0, seeds: int = 10, runs: int = 30, k: int = TRANSFORMER_K,
                    n: int = 64, algos=ALGOS, model=None) -> CriterionResult:
    """Completeness, faithfulness and randomness orderings between Ns, Dn and NsDn circuits."""
    model = model or reference_transformer()
    need = math.ceil(0.8 * seeds)
    per_algo = {a: {"a": 0, "b_nsdn": 0, "b_dn": 0, "b": 0} for a in algos}
    runs_detail = []
    for s in range(seeds):
        root = derive(seed, "orderings", s)
        ctx = PatchContext(model, make_task("induction", {"n": n}, seed=derive(root, "data")),
                           seed=derive(root, "ablation"))
        for algo in algos:
            cs = _strategy_circuits(ctx, algo, k, derive(root, algo))
            kl = {st: faithfulness(ctx, c)["kl"] for st, c in cs.items()}
            rem = {st: completeness(ctx, c)["kl_of_removal"] for st, c in cs.items()}
            c = per_algo[algo]
            c["a"] += rem["NsDn"] > rem["Ns"]
            b1, b2 = kl["NsDn"] <= 1.2 * kl["Ns"], kl["Dn"] > kl["Ns"]
            c["b_nsdn"] += b1
            c["b_dn"] += b2
            c["b"] += b1 and b2
            runs_detail.append({"seed": s, "algorithm": algo, "kl": kl, "kl_of_removal": rem})
    ctx = PatchContext(model, make_task("induction", {"n": n}, seed=derive(seed, "randomness-data")))
    rand = {}
    for algo in [a for a in algos if a != "linear"]:
        run_seeds = [derive(seed, "randomness", algo, i) for i in range(runs)]
        h = {st: hamming_stats([discover(ctx, DiscoveryConfig(algo, st, k=k, metric="kl", seed=rs)).circuit
                                for rs in run_seeds])["mean_hamming"] for st in ("Ns", "NsDn")}
        rand[algo] = h
    fails = []
    for algo, c in per_algo.items():
        if c["a"] < need:
            fails.append(f"(a) {algo} {c['a']}/{seeds}")
        if c["b"] < need:
            fails.append(f"(b) {algo} {c['b']}/{seeds} (NsDn<=1.2Ns {c['b_nsdn']}, Dn>Ns {c['b_dn']})")
    for algo, h in rand.items():
        if not h["Ns"] > h["NsDn"]:
            fails.append(f"(c) {algo} hamming Ns {h['Ns']:.2f} vs NsDn {h['NsDn']:.2f}")
    summary = (f"k={k}, {seeds} seeds; " + ("all orderings hold" if not fails else "; ".join(fails)))
    return CriterionResult(6, "Ns/Dn/NsDn orderings on the trained transformer", not fails, summary,
                           {"k": k, "counts": per_algo, "randomness": rand, "runs": runs_detail})


# -- 7: misalignment sweep -----------------------------------------------------------

def check_misalignment_sweep(seed: int = 0, k_ns: int = 18, algorithm: str = "linear",
                             samples: int = 30) -> CriterionResult:
    pn = planted_network(["AND", "OR", "ADDER"] * 3, [2] * 9)
    ctx = network_context(pn.spec)
    n_edges = len(ctx.graph.edges)
    k_dn = list(range(round(0.6 * k_ns), min(round(1.4 * k_ns), n_edges) + 1))
    cfg = DiscoveryConfig(algorithm, k=k_ns, metric="sink", seed=derive(seed, "sweep"))
    reports = ratio_sweep(ctx, cfg, k_ns, k_dn, SamplerConfig(samples=samples, seed=derive(seed, "sweep-sampler")),
                          "sink", 1.5)
    ands = [r.and_score or 0.0 for r in reports]
    ors = [r.or_score if r.or_score is not None else r.m for r in reports]
    totals = [r.total for r in reports]
    best = reports[totals.index(min(totals))]
    checks = {
        "and_max_at_smallest": ands[0] == max(ands) and ands[0] > min(ands),
        "or_max_at_largest": ors[-1] == max(ors) and ors[-1] > min(ors),
        "ratio_in_range": 0.8 <= best.ratio <= 1.25,
    }
    failed = [name for name, ok in checks.items() if not ok]
    summary = (f"k_ns={k_ns}, k_dn {k_dn[0]}..{k_dn[-1]}, best ratio {best.ratio:.2f}; "
               + ("shape as expected" if not failed else "failed: " + ", ".join(failed)))
    return CriterionResult(7, "misalignment sweep", not failed, summary,
                           {"checks": checks, "sweep": [r.to_dict() | {"total": r.total} for r in reports]})


# -- 8: variance of the two completeness metrics ---------------------------------------

def check_metric_variance(seed: int = 0, runs: int = 5, k: int = TRANSFORMER_K, n: int = 64,
                          algorithm: str = "greedy", model=None) -> CriterionResult:
    """Spread across discovery seeds of sampled incompleteness (5 and 30 draws) and of kl-of-removal."""
    model = model or reference_transformer()
    ctx = PatchContext(model, make_task("induction", {"n": n}, seed=derive(seed, "variance-data")))
    vals = {"sampled_5": [], "sampled_30": [], "removal": []}
    for i in range(runs):
        run_seed = derive(seed, "variance", i)
        c = discover(ctx, DiscoveryConfig(algorithm, "Ns", k=k, metric="kl", seed=run_seed)).circuit
        vals["sampled_5"].append(incompleteness_sampled(ctx, c, 5, seed=derive(run_seed, "k5"))["mean"])
        vals["sampled_30"].append(incompleteness_sampled(ctx, c, 30, seed=derive(run_seed, "k30"))["mean"])
        vals["removal"].append(completeness(ctx, c)["kl_of_removal"])
    std = {key: statistics.stdev(v) for key, v in vals.items()}
    ok = std["sampled_5"] >= std["sampled_30"] >= std["removal"]
    summary = (f"std 5 draws {std['sampled_5']:.3g}, 30 draws {std['sampled_30']:.3g}, "
               f"removal {std['removal']:.3g}")
    return CriterionResult(8, "variance of sampled vs removal completeness", ok, summary,
                           {"values": vals, "std": std, "k": k, "algorithm": algorithm})


# -- 9: determinism and the suite runner ------------------------------------------------

DETERMINISM_SUBSET = (1, 2, 3, 5)


def check_determinism(seed: int = 0, subset=DETERMINISM_SUBSET) -> CriterionResult:
    """Run the suite twice on ``subset`` and compare the serialized reports byte for byte."""
    from .harness import dumps_report

    first = dumps_report(run_acceptance_suite(subset, seed, echo=None)[1])
    second = dumps_report(run_acceptance_suite(subset, seed, echo=None)[1])
    same = first == second
    summary = f"criteria {list(subset)} run twice: reports {'identical' if same else 'differ'} ({len(first)} bytes)"
    return CriterionResult(9, "byte-identical verify reports", same, summary,
                           {"subset": list(subset), "bytes": len(first)})


CHECKS = {
    1: check_recovery_matrix,
    2: lambda seed: check_adder_outputs(),
    3: check_oracle,
    4: check_gradients,
    5: check_box_ablation,
    6: check_orderings,
    7: check_misalignment_sweep,
    8: check_metric_variance,
    9: check_determinism,
}


def run_criterion(number: int, seed: int = 0) -> CriterionResult:
    if number not in CHECKS:
        raise ValueError(f"unknown criterion {number}; choose from {sorted(CHECKS)}")
    t0 = time.perf_counter()
    fn = CHECKS[number]
    result = fn(seed) if number == 2 else fn(seed=seed)
    result.seconds = time.perf_counter() - t0
    return result


def run_acceptance_suite(criteria=None, seed: int = 0, echo=print) -> tuple[list[CriterionResult], dict]:
    """Run the selected criteria (all by default); returns the results and a report tree."""
    from .harness import new_report

    numbers = sorted(set(criteria)) if criteria else sorted(CHECKS)
    results = []
    for n in numbers:
        r = run_criterion(n, seed)
        results.append(r)
        if echo:
            echo(r.line())
    report = new_report(
        "verify", seed=seed, criteria=[r.to_dict() for r in results],
        passed=all(r.passed for r in results),
    )
    return results, report
