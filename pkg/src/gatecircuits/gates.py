"""AND/OR/ADDER labelling from a (noising, denoising) circuit pair, gate grouping,
and the misalignment scores that test whether the two circuits were sized alike."""

from __future__ import annotations

import itertools
import random
import warnings
from dataclasses import dataclass, field

from .graph import Circuit, EdgeId, GraphError, NodeId, random_subcircuit
from .intervention import PatchContext, circuits_distance, normalize_metric

LABELS = ("AND", "OR", "ADDER")


class GateError(ValueError):
    pass


@dataclass(frozen=True)
class GateLabeling:
    labels: dict[EdgeId, str]

    def edges(self, label: str) -> list[EdgeId]:
        return sorted((e for e, lab in self.labels.items() if lab == label), key=lambda e: e.name)

    def counts(self) -> dict[str, int]:
        return {lab: len(self.edges(lab)) for lab in LABELS}

    def to_dict(self) -> dict[str, list[str]]:
        return {lab.lower(): [e.name for e in self.edges(lab)] for lab in LABELS}


def classify_gates(c_ns: Circuit, c_dn: Circuit) -> GateLabeling:
    """AND = Ns only, OR = Dn only, ADDER = both."""
    if c_ns.graph_id != c_dn.graph_id:
        raise GraphError("circuits belong to different graphs")
    if len(c_ns) != len(c_dn):
        warnings.warn(
            f"circuit sizes differ (Ns {len(c_ns)}, Dn {len(c_dn)}); labels may be misaligned",
            stacklevel=2,
        )
    labels = {}
    for e in c_ns.members | c_dn.members:
        in_ns, in_dn = e in c_ns.members, e in c_dn.members
        labels[e] = "ADDER" if in_ns and in_dn else ("AND" if in_ns else "OR")
    return GateLabeling(labels)


@dataclass(frozen=True)
class Gate:
    receiver: NodeId
    label: str
    edges: frozenset[EdgeId]

    def __post_init__(self):
        if not self.edges:
            raise GateError("a gate needs at least one edge")

    def __len__(self) -> int:
        return len(self.edges)


def group_gates(labeling: GateLabeling, graph) -> list[Gate]:
    """One gate per (receiver, label); a receiver with mixed labels yields several gates."""
    groups: dict[tuple[NodeId, str], set[EdgeId]] = {}
    for e, lab in labeling.labels.items():
        groups.setdefault((e.receiver, lab), set()).add(e)
    return [
        Gate(r, lab, frozenset(es))
        for (r, lab), es in sorted(groups.items(), key=lambda kv: (graph.position(kv[0][0]), kv[0][1]))
    ]


# -- misalignment --------------------------------------------------------------

@dataclass(frozen=True)
class SamplerConfig:
    samples: int = 30
    size_range: tuple[int, int] = (2, 5)
    exhaustive_limit: int = 200
    seed: int = 0
    max_resample: int = 100


def same_receiver_pairs(edges) -> list[tuple[EdgeId, EdgeId]]:
    """Ordered (i, j), i != j, sharing a receiver."""
    by_recv: dict[NodeId, list[EdgeId]] = {}
    for e in sorted(edges, key=lambda e: e.name):
        by_recv.setdefault(e.receiver, []).append(e)
    return [p for es in by_recv.values() for p in itertools.permutations(es, 2)]


def _subsample(items: list, limit: int, rng: random.Random) -> list:
    return items if len(items) <= limit else rng.sample(items, limit)


def _removed(ctx: PatchContext, *drop) -> Circuit:
    full = ctx.graph.full_circuit()
    out = set(full.members)
    for d in drop:
        out -= set(d)
    return ctx.graph.circuit(out)


def _k_samples(c: Circuit, cfg: SamplerConfig, rng: random.Random, need_pairs: bool):
    """Draw removal sets K from c, keeping only those that leave a same-receiver pair."""
    n = len(c)
    lo, hi = cfg.size_range
    hi = min(hi, n - 2)
    lo = max(0, min(lo, hi))
    out = []
    for _ in range(cfg.samples):
        for _attempt in range(cfg.max_resample):
            k = random_subcircuit(c, (lo, hi), rng)
            rest = c.members - k.members
            if not need_pairs or same_receiver_pairs(rest):
                out.append(k)
                break
    if not out:
        raise GateError("no removal set leaves a same-receiver pair")
    return out


def _require_pairs(c: Circuit, what: str):
    pairs = same_receiver_pairs(c.members)
    if not pairs:
        raise GateError(f"{what} set has no pair of edges sharing a receiver")
    return pairs


def misalignment_and(
    ctx: PatchContext, c_and: Circuit, sampler: SamplerConfig | None = None, metric: str = "sink"
) -> float:
    """Mean D(G\\i || G\\{i,j}) over same-receiver pairs of the AND set, minus the
    same quantity on the graph with a random subset K of the AND set removed.

    D compares noising-side patched outputs. Near 0 for true AND gates (the
    second removal changes nothing); ADDER edges filed as AND raise it.
    """
    sampler = sampler or SamplerConfig()
    metric = normalize_metric(metric)
    rng = random.Random(f"and|{sampler.seed}")
    pairs = _require_pairs(c_and, "AND")
    first = [
        circuits_distance(ctx, _removed(ctx, [i]), _removed(ctx, [i, j]), "Ns", metric)
        for i, j in _subsample(pairs, sampler.exhaustive_limit, rng)
    ]
    second = []
    for k in _k_samples(c_and, sampler, rng, need_pairs=True):
        rest_pairs = same_receiver_pairs(c_and.members - k.members)
        vals = [
            circuits_distance(ctx, _removed(ctx, k.members, [i]), _removed(ctx, k.members, [i, j]), "Ns", metric)
            for i, j in _subsample(rest_pairs, sampler.exhaustive_limit, rng)
        ]
        second.append(sum(vals) / len(vals))
    return sum(first) / len(first) - sum(second) / len(second)


def misalignment_or(
    ctx: PatchContext, c_or: Circuit, sampler: SamplerConfig | None = None, metric: str = "sink",
    m: float = 1.5,
) -> float:
    """Mean D(G\\i || G\\K\\i*) minus mean D(G\\{i,j} || G\\K\\{i*,j*}), plus m.

    The pair-removal terms cancel for true OR gates, leaving m.
    """
    sampler = sampler or SamplerConfig()
    metric = normalize_metric(metric)
    rng = random.Random(f"or|{sampler.seed}")
    pairs = _require_pairs(c_or, "OR")
    singles = sorted(c_or.members, key=lambda e: e.name)
    first, second = [], []
    for k in _k_samples(c_or, sampler, rng, need_pairs=True):
        rest = c_or.members - k.members
        rest_singles = sorted(rest, key=lambda e: e.name)
        rest_pairs = same_receiver_pairs(rest)
        combos = list(itertools.product(singles, rest_singles))
        vals = [
            circuits_distance(ctx, _removed(ctx, [i]), _removed(ctx, k.members, [i2]), "Ns", metric)
            for i, i2 in _subsample(combos, sampler.exhaustive_limit, rng)
        ]
        first.append(sum(vals) / len(vals))
        combos2 = list(itertools.product(pairs, rest_pairs))
        vals2 = [
            circuits_distance(ctx, _removed(ctx, p), _removed(ctx, k.members, q), "Ns", metric)
            for p, q in _subsample(combos2, sampler.exhaustive_limit, rng)
        ]
        second.append(sum(vals2) / len(vals2))
    return sum(first) / len(first) - sum(second) / len(second) + m


@dataclass
class MisalignmentReport:
    and_score: float | None
    or_score: float | None
    m: float = 1.5
    sample_count: int = 30
    ratio: float = 1.0  # |C_Ns| / |C_Dn|
    k_ns: int = 0
    k_dn: int = 0
    counts: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return (self.and_score or 0.0) + (self.or_score if self.or_score is not None else self.m)

    def to_dict(self) -> dict:
        return {
            "k_ns": self.k_ns, "k_dn": self.k_dn, "ratio": self.ratio,
            "and_score": self.and_score, "or_score": self.or_score, "m": self.m,
            "sample_count": self.sample_count, "counts": self.counts,
        }


def misalignment_report(
    ctx: PatchContext, c_ns: Circuit, c_dn: Circuit, sampler: SamplerConfig | None = None,
    metric: str = "sink", m: float = 1.5,
) -> MisalignmentReport:
    sampler = sampler or SamplerConfig()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lab = classify_gates(c_ns, c_dn)
    g = ctx.graph
    c_and, c_or = g.circuit(lab.edges("AND")), g.circuit(lab.edges("OR"))
    a = misalignment_and(ctx, c_and, sampler, metric) if same_receiver_pairs(c_and.members) else None
    o = misalignment_or(ctx, c_or, sampler, metric, m) if same_receiver_pairs(c_or.members) else None
    return MisalignmentReport(
        a, o, m, sampler.samples, len(c_ns) / max(len(c_dn), 1), len(c_ns), len(c_dn), lab.counts()
    )


def ratio_sweep(
    ctx: PatchContext, cfg, k_ns: int, k_dn_values, sampler: SamplerConfig | None = None,
    metric: str = "sink", m: float = 1.5,
) -> list[MisalignmentReport]:
    """Fix the Ns circuit at k_ns edges and score the labelling for each Dn size.

    Score-based algorithms (linear, mask) rank Dn edges once and cut at each
    k_dn; greedy re-runs its exact-k search per size.
    """
    from .discovery import discover, select_top_k

    n = len(ctx.graph.edges)
    k_dn_values = list(k_dn_values)
    if k_ns > n or any(k > n or k < 0 for k in k_dn_values):
        raise GateError(f"edge counts must lie in [0, {n}]")
    c_ns = discover(ctx, cfg.with_(strategy="Ns", k=k_ns)).circuit
    dn_scores = None
    if cfg.algorithm != "greedy":
        dn_scores = discover(ctx, cfg.with_(strategy="Dn", k=0)).scores
    reports = []
    for k in k_dn_values:
        if dn_scores is not None:
            c_dn = select_top_k(ctx.graph, dn_scores, k)
        else:
            c_dn = discover(ctx, cfg.with_(strategy="Dn", k=k)).circuit
        reports.append(misalignment_report(ctx, c_ns, c_dn, sampler, metric, m))
    return reports


def best_ratio(reports: list[MisalignmentReport]) -> MisalignmentReport:
    """Report whose summed misalignment is smallest (first on ties)."""
    if not reports:
        raise GateError("empty sweep")
    return min(reports, key=lambda r: r.total)
