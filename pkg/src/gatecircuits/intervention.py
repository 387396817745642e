"""Ablation modes, clean/corrupted run orchestration, and output distances."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import torch

from .graph import Circuit
from .models.base import ActivationCache, EdgeModel
from .models.tasks import TaskDataset

STRATEGIES = ("Ns", "Dn", "NsDn")
METRICS = ("kl", "sink", "logitdiff", "acc")
_METRIC_ALIASES = {
    "kl": "kl", "kl-divergence": "kl",
    "sink": "sink", "sink-abs-diff": "sink",
    "logitdiff": "logitdiff", "logit-diff": "logitdiff",
    "acc": "acc", "accuracy-delta": "acc",
}
_STRATEGY_ALIASES = {"ns": "Ns", "dn": "Dn", "nsdn": "NsDn", "ns+dn": "NsDn"}


class InterventionError(ValueError):
    pass


def normalize_strategy(s: str) -> str:
    if s in STRATEGIES:
        return s
    try:
        return _STRATEGY_ALIASES[s.lower()]
    except KeyError:
        raise InterventionError(f"unknown strategy {s!r}") from None


def normalize_metric(m: str) -> str:
    try:
        return _METRIC_ALIASES[m]
    except KeyError:
        raise InterventionError(f"unknown metric {m!r}") from None


@dataclass(frozen=True)
class AblationMode:
    kind: str = "zero"
    mean: float = 0.0
    std: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "noise", "interchange"):
            raise InterventionError(f"unknown ablation kind {self.kind!r}")
        if self.std < 0:
            raise InterventionError("noise std must be >= 0")


def default_ablation(model: EdgeModel) -> AblationMode:
    return AblationMode("interchange" if model.family == "trained-transformer" else "zero")


def _noise(shape, seed: int, pair: int, tag: str, mode: AblationMode) -> torch.Tensor:
    h = hashlib.sha256(f"{seed}|{pair}|{tag}".encode()).digest()
    gen = torch.Generator().manual_seed(int.from_bytes(h[:8], "little"))
    return mode.mean + mode.std * torch.randn(tuple(shape), generator=gen, dtype=torch.float64)


def corrupted_cache(
    model: EdgeModel, dataset: TaskDataset, mode: AblationMode, clean: ActivationCache | None = None,
    seed: int = 0,
) -> ActivationCache:
    """Corrupted-side cache for a dataset.

    zero: every value 0. noise: values drawn per (seed, pair, edge). interchange:
    the forward run on the corrupted inputs.
    """
    if mode.kind == "interchange":
        if any(p.corrupted is None for p in dataset.pairs):
            raise InterventionError("interchange ablation needs corrupted inputs")
        return model.forward(dataset.corrupted_inputs())[1]
    if clean is None:
        clean = model.forward(dataset.clean_inputs())[1]
    if mode.kind == "zero":
        nodes = {n: torch.zeros_like(v) for n, v in clean.node_values.items()}
        edges = {e: torch.zeros_like(v) for e, v in clean.edge_values.items()}
    else:
        def sample(ref: torch.Tensor, tag: str) -> torch.Tensor:
            rows = [_noise(ref.shape[1:], seed, i, tag, mode) for i in range(ref.shape[0])]
            return torch.stack(rows).to(ref.dtype)

        nodes = {n: sample(v, n.name) for n, v in clean.node_values.items()}
        edges = {e: sample(v, e.name) for e, v in clean.edge_values.items()}
    out = nodes[model.graph.output]
    return ActivationCache(model.graph, nodes, edges, out, model.to_logits(out), consistent=False)


class PatchContext:
    """A model, a dataset, and its clean and corrupted caches.

    Noising (Ns) runs patch from clean (base) toward corrupted (donor);
    denoising (Dn) runs swap the two roles.
    """

    def __init__(self, model: EdgeModel, dataset: TaskDataset, ablation: AblationMode | None = None,
                 seed: int = 0):
        if len(dataset) == 0:
            raise InterventionError("empty dataset")
        self.model = model
        self.dataset = dataset
        self.graph = model.graph
        self.ablation = ablation or default_ablation(model)
        self.seed = seed
        self.clean = model.forward(dataset.clean_inputs())[1]
        self.corrupt = corrupted_cache(model, dataset, self.ablation, self.clean, seed)
        self.has_labels = dataset.has_labels
        if self.has_labels:
            self.clean_labels = torch.tensor(dataset.clean_labels())
            self.corrupt_labels = torch.tensor(dataset.corrupted_labels())
        self._memo: dict = {}

    def sides(self, strategy: str) -> tuple[ActivationCache, ActivationCache]:
        if strategy == "Ns":
            return self.clean, self.corrupt
        if strategy == "Dn":
            return self.corrupt, self.clean
        raise InterventionError(f"strategy {strategy!r} has no single patch direction")

    def labels(self, strategy: str) -> tuple[torch.Tensor, torch.Tensor]:
        if not self.has_labels:
            raise InterventionError("dataset has no label semantics")
        if strategy == "Ns":
            return self.clean_labels, self.corrupt_labels
        return self.corrupt_labels, self.clean_labels

    def patched(self, retained: Circuit, strategy: str) -> ActivationCache:
        key = (strategy, retained.members)
        hit = self._memo.get(key)
        if hit is None:
            base, donor = self.sides(strategy)
            hit = self.model.patched_cache(base, donor, retained)
            if len(self._memo) > 4096:
                self._memo.clear()
            self._memo[key] = hit
        return hit

    def reference(self, strategy: str) -> ActivationCache:
        return self.sides(strategy)[0]


# -- distances ---------------------------------------------------------------

def _kl(p_logits: torch.Tensor, q_logits: torch.Tensor) -> torch.Tensor:
    lp = torch.log_softmax(p_logits, dim=-1)
    lq = torch.log_softmax(q_logits, dim=-1)
    return (lp.exp() * (lp - lq)).sum(-1).clamp_min(0.0)


def _logit_diff(ctx: PatchContext, logits: torch.Tensor, strategy: str) -> torch.Tensor:
    if ctx.model.family != "trained-transformer":
        return logits[..., 0] - logits[..., 1]
    good, bad = ctx.labels(strategy)
    idx = torch.arange(logits.shape[0])
    return logits[idx, good] - logits[idx, bad]


def output_distance(
    ctx: PatchContext, ref: ActivationCache, other: ActivationCache, strategy: str, metric: str
) -> torch.Tensor:
    """Per-pair distance D(ref || other)."""
    metric = normalize_metric(metric)
    if metric == "kl":
        return _kl(ref.logits, other.logits)
    if metric == "sink":
        if ctx.model.family == "trained-transformer":
            raise InterventionError("sink distance is only defined for scalar-output models")
        return (ref.output - other.output).abs()
    if metric == "logitdiff":
        return (_logit_diff(ctx, ref.logits, strategy) - _logit_diff(ctx, other.logits, strategy)).abs()
    good, _ = ctx.labels(strategy)
    a = (ref.logits.argmax(-1) == good).double()
    b = (other.logits.argmax(-1) == good).double()
    return (a - b).abs()


@dataclass
class StrategyRun:
    strategy: str
    distances: torch.Tensor  # per pair
    outputs: dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(self.distances.mean())


def strategy_run(ctx: PatchContext, circuit: Circuit, strategy: str, metric: str) -> StrategyRun:
    strategy = normalize_strategy(strategy)
    if strategy == "NsDn":
        ns = strategy_run(ctx, circuit, "Ns", metric)
        dn = strategy_run(ctx, circuit, "Dn", metric)
        return StrategyRun("NsDn", ns.distances + dn.distances, {**ns.outputs, **dn.outputs})
    patched = ctx.patched(circuit, strategy)
    d = output_distance(ctx, ctx.reference(strategy), patched, strategy, metric)
    return StrategyRun(strategy, d, {strategy: patched.logits})


def circuit_distance(ctx: PatchContext, circuit: Circuit, strategy: str = "Ns", metric: str = "kl") -> float:
    """Mean over pairs of D(full-graph output || circuit output)."""
    return strategy_run(ctx, circuit, strategy, metric).mean


def circuits_distance(
    ctx: PatchContext, a: Circuit, b: Circuit, strategy: str = "Ns", metric: str = "kl"
) -> float:
    """Mean over pairs of D(output of circuit a || output of circuit b)."""
    return float(output_distance(ctx, ctx.patched(a, strategy), ctx.patched(b, strategy), strategy, metric).mean())


def circuit_accuracy(ctx: PatchContext, circuit: Circuit, strategy: str = "Ns") -> float:
    """Fraction of pairs whose patched argmax hits the clean (Ns) or corrupted (Dn) label."""
    strategy = normalize_strategy(strategy)
    if strategy == "NsDn":
        raise InterventionError("accuracy is defined per single strategy")
    good, _ = ctx.labels(strategy)
    logits = ctx.patched(circuit, strategy).logits
    return float((logits.argmax(-1) == good).double().mean())


def scoring_loss(ctx: PatchContext, metric: str, strategy: str):
    """Differentiable scalar task loss used for gradient attribution.

    Scalar-output models use the sink value; transformers use the logit
    difference between the run's own label and the other side's label.
    """
    metric = normalize_metric(metric)
    if metric == "acc":
        raise InterventionError("accuracy is not differentiable")

    def loss(cache: ActivationCache) -> torch.Tensor:
        if ctx.model.family == "trained-transformer":
            return _logit_diff(ctx, cache.logits, strategy).mean()
        return cache.output.mean()

    return loss
