"""Circuit discovery: greedy threshold search, linear (gradient) scores, hard-concrete masks.

Each family runs under the noising (Ns) criterion, the denoising (Dn)
criterion, or both (NsDn), and can be sized to an exact edge count.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

import torch

from .graph import Circuit, EdgeId
from .intervention import (
    PatchContext,
    normalize_metric,
    normalize_strategy,
    output_distance,
    scoring_loss,
)

ALGORITHMS = ("greedy", "linear", "mask")


class DiscoveryError(ValueError):
    pass


@dataclass(frozen=True)
class MaskHParams:
    beta: float = 2.0 / 3.0
    gamma: float = -0.1
    zeta: float = 1.1
    lam: float = 3.0  # weight on the mean expected-L0 over edges
    steps: int = 300
    lr: float = 0.1
    init_mean: float = 3.0
    init_std: float = 0.01
    threshold: float = 0.5
    joint: bool = False  # NsDn: optimize the summed objective instead of averaging two runs


@dataclass(frozen=True)
class DiscoveryConfig:
    algorithm: str = "greedy"
    strategy: str = "Ns"
    tau: float | None = None
    k: int | None = None
    metric: str = "kl"
    seed: int = 0
    mask: MaskHParams | None = None
    k_search: str = "bisect"  # greedy exact-k: "bisect" over tau, or "trim" one run

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise DiscoveryError(f"unknown algorithm {self.algorithm!r}")
        object.__setattr__(self, "strategy", normalize_strategy(self.strategy))
        object.__setattr__(self, "metric", normalize_metric(self.metric))
        if (self.tau is None) == (self.k is None):
            raise DiscoveryError("set exactly one of tau or k")
        if self.tau is not None and not self.tau > 0:
            raise DiscoveryError("tau must be > 0")
        if self.k is not None and self.k < 0:
            raise DiscoveryError("k must be >= 0")
        if self.algorithm == "mask" and self.mask is None:
            object.__setattr__(self, "mask", MaskHParams())
        if self.algorithm != "mask" and self.mask is not None:
            raise DiscoveryError("mask hyperparameters given for a non-mask algorithm")
        if self.k_search not in ("bisect", "trim"):
            raise DiscoveryError(f"unknown k_search {self.k_search!r}")

    def with_(self, **kw) -> "DiscoveryConfig":
        if "k" in kw and "tau" not in kw:
            kw["tau"] = None
        if "tau" in kw and "k" not in kw:
            kw["k"] = None
        return replace(self, **kw)


@dataclass
class EdgeScores:
    scores: dict[EdgeId, float]

    def __post_init__(self):
        for e, v in self.scores.items():
            if not math.isfinite(v):
                raise DiscoveryError(f"non-finite score on {e.name}")

    def __getitem__(self, e: EdgeId) -> float:
        return self.scores[e]


@dataclass
class DiscoveryResult:
    circuit: Circuit
    scores: EdgeScores
    info: dict = field(default_factory=dict)


def _parts(strategy: str) -> tuple[str, ...]:
    return ("Ns", "Dn") if strategy == "NsDn" else (strategy,)


def select_top_k(graph, scores: EdgeScores, k: int) -> Circuit:
    """The k edges of largest |score|; ties go to the earlier edge in canonical order."""
    if k > len(graph.edges):
        raise DiscoveryError(f"k exceeds edge count ({k} > {len(graph.edges)})")
    if k < 0:
        raise DiscoveryError("k must be >= 0")
    ranked = sorted(graph.edge_order, key=lambda e: (-abs(scores.scores[e]), graph.edge_index(e)))
    return graph.circuit(ranked[:k])


def select_threshold(graph, scores: EdgeScores, tau: float) -> Circuit:
    return graph.circuit(e for e in graph.edge_order if abs(scores.scores[e]) >= tau)


# -- greedy ------------------------------------------------------------------

def visit_order(graph, seed: int) -> list[EdgeId]:
    """Receivers from the output backwards; in-edges shuffled per (seed, receiver)."""
    order = []
    for n in reversed(graph.topo):
        edges = list(graph.in_edges(n))
        random.Random(f"{seed}|{n.name}").shuffle(edges)
        order.extend(edges)
    return order


def greedy_search(ctx: PatchContext, strategy: str, metric: str, tau: float, seed: int):
    """One threshold pass. Returns the circuit and the Δ recorded at each edge's visit."""
    if not tau > 0:
        raise DiscoveryError("tau must be > 0")
    strategy, metric = normalize_strategy(strategy), normalize_metric(metric)
    g, model = ctx.graph, ctx.model
    mask = {e: 1.0 for e in g.edges}
    current, dist = {}, {}
    with torch.no_grad():
        for s in _parts(strategy):
            current[s] = ctx.reference(s) if ctx.reference(s).consistent else model.run(
                base=ctx.sides(s)[0], donor=ctx.sides(s)[1], mask=mask)
            dist[s] = float(output_distance(ctx, ctx.reference(s), current[s], s, metric).mean())
        deltas: dict[EdgeId, float] = {}
        for e in visit_order(g, seed):
            mask[e] = 0.0
            pos = g.position(e.receiver)
            trial, tdist = {}, {}
            for s in _parts(strategy):
                base, donor = ctx.sides(s)
                trial[s] = model.run(base=base, donor=donor, mask=mask, reuse=(current[s], pos))
                tdist[s] = float(output_distance(ctx, ctx.reference(s), trial[s], s, metric).mean())
            delta = sum(tdist[s] - dist[s] for s in tdist)
            deltas[e] = delta
            if delta < tau:
                current, dist = trial, tdist
            else:
                mask[e] = 1.0
    return g.circuit(e for e in g.edges if mask[e] == 1.0), deltas


def _resize(graph, circuit: Circuit, deltas: dict[EdgeId, float], k: int) -> Circuit:
    """Trim the lowest-Δ edges, or add back the highest-Δ removed edges, to reach k."""
    idx = graph.edge_index
    have = set(circuit.members)
    if len(have) > k:
        drop = sorted(have, key=lambda e: (deltas[e], -idx(e)))[: len(have) - k]
        have -= set(drop)
    elif len(have) < k:
        pool = sorted(set(graph.edges) - have, key=lambda e: (-deltas[e], idx(e)))
        have |= set(pool[: k - len(have)])
    return graph.circuit(have)


def greedy_at_k(ctx: PatchContext, cfg: DiscoveryConfig, k: int, iters: int = 14):
    """Bisect tau (log scale) until the pass keeps exactly k edges.

    A plateau that skips k is resolved by trimming the lowest-Δ edges of the
    smallest circuit above k. ``k_search="trim"`` skips bisection and resizes
    a single pass at ``tau`` (or a near-zero threshold).
    """
    g = ctx.graph
    if k > len(g.edges):
        raise DiscoveryError(f"k exceeds edge count ({k} > {len(g.edges)})")
    run = lambda tau: greedy_search(ctx, cfg.strategy, cfg.metric, tau, cfg.seed)  # noqa: E731
    lo = cfg.tau or 1e-9
    c, d = run(lo)
    if len(c) <= k or cfg.k_search == "trim":
        return _resize(g, c, d, k), d, {"tau": lo, "runs": 1}
    best = (c, d, lo)
    hi = 1.0
    runs = 1
    while True:
        c_hi, d_hi = run(hi)
        runs += 1
        if len(c_hi) <= k or hi > 1e6:
            break
        best, lo, hi = (c_hi, d_hi, hi), hi, hi * 10
    if len(c_hi) == k:
        return c_hi, d_hi, {"tau": hi, "runs": runs}
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        c, d = run(mid)
        runs += 1
        if len(c) == k:
            return c, d, {"tau": mid, "runs": runs}
        if len(c) > k:
            best, lo = (c, d, mid), mid
        else:
            hi = mid
    c, d, tau = best
    return _resize(g, c, d, k), d, {"tau": tau, "runs": runs, "trimmed": True}


def greedy_discover(ctx: PatchContext, cfg: DiscoveryConfig) -> DiscoveryResult:
    if cfg.k is not None:
        circuit, deltas, info = greedy_at_k(ctx, cfg, cfg.k)
        return DiscoveryResult(circuit, EdgeScores(deltas), info)
    circuit, deltas = greedy_search(ctx, cfg.strategy, cfg.metric, cfg.tau, cfg.seed)
    return DiscoveryResult(circuit, EdgeScores(deltas), {"tau": cfg.tau})


# -- linear ------------------------------------------------------------------

def linear_scores(ctx: PatchContext, strategy: str = "Ns", metric: str = "kl") -> EdgeScores:
    """First-order edge effects.

    Ns: (x̃ - x) · dL/dx at the clean run. Dn: (x̃ - x) · dL/dx̃ at the corrupted
    run. NsDn adds the magnitudes of the two, since their signs oppose for an
    edge that matters in both directions.
    """
    strategy = normalize_strategy(strategy)
    metric = normalize_metric(metric)
    if metric == "acc":
        raise DiscoveryError("accuracy is not differentiable")
    g, model = ctx.graph, ctx.model
    parts = {}
    for s in _parts(strategy):
        base, donor = ctx.sides(s)
        grads = model.edge_gradients(scoring_loss(ctx, metric, s), base=base, donor=donor).grads
        parts[s] = {
            e: float(((ctx.corrupt.edge_values[e] - ctx.clean.edge_values[e]) * grads[e]).sum())
            for e in g.edge_order
        }
    if strategy != "NsDn":
        return EdgeScores(parts[strategy])
    return EdgeScores({e: abs(parts["Ns"][e]) + abs(parts["Dn"][e]) for e in g.edge_order})


def linear_discover(ctx: PatchContext, cfg: DiscoveryConfig) -> DiscoveryResult:
    scores = linear_scores(ctx, cfg.strategy, cfg.metric)
    if cfg.k is not None:
        return DiscoveryResult(select_top_k(ctx.graph, scores, cfg.k), scores)
    return DiscoveryResult(select_threshold(ctx.graph, scores, cfg.tau), scores)


# -- hard-concrete masks -----------------------------------------------------

class HardConcrete:
    """Per-edge stretched hard-concrete gates over log-alpha parameters."""

    def __init__(self, edges, hp: MaskHParams, seed: int):
        self.edges = list(edges)
        self.hp = hp
        gen = torch.Generator().manual_seed(seed)
        n = len(self.edges)
        self.log_alpha = (hp.init_mean + hp.init_std * torch.randn(n, generator=gen, dtype=torch.float64))
        self.log_alpha.requires_grad_()
        self.gen = gen

    def sample(self) -> torch.Tensor:
        hp = self.hp
        u = torch.rand(len(self.edges), generator=self.gen, dtype=torch.float64).clamp(1e-6, 1 - 1e-6)
        s = torch.sigmoid((torch.log(u) - torch.log1p(-u) + self.log_alpha) / hp.beta)
        return (s * (hp.zeta - hp.gamma) + hp.gamma).clamp(0.0, 1.0)

    def expected_l0(self) -> torch.Tensor:
        hp = self.hp
        return torch.sigmoid(self.log_alpha - hp.beta * math.log(-hp.gamma / hp.zeta))

    def final(self) -> torch.Tensor:
        """Keep probability sigmoid(log_alpha).

        Above 0.5 exactly when the clamped deterministic gate is above 0.5, but
        it does not saturate, so it still ranks edges for exact-k selection.
        """
        with torch.no_grad():
            return torch.sigmoid(self.log_alpha)

    def deterministic_gate(self) -> torch.Tensor:
        hp = self.hp
        with torch.no_grad():
            return (torch.sigmoid(self.log_alpha) * (hp.zeta - hp.gamma) + hp.gamma).clamp(0.0, 1.0)


def _train_mask(ctx: PatchContext, parts: tuple[str, ...], metric: str, hp: MaskHParams, seed: int):
    # Training is deterministic given its inputs, so NsDn can reuse the Ns and Dn runs.
    key = ("mask", parts, metric, hp, seed)
    hit = ctx._memo.get(key)
    if hit is None:
        hit = ctx._memo[key] = _train_mask_uncached(ctx, parts, metric, hp, seed)
    return hit


def _train_mask_uncached(ctx: PatchContext, parts: tuple[str, ...], metric: str, hp: MaskHParams, seed: int):
    g, model = ctx.graph, ctx.model
    gates = HardConcrete(g.edge_order, hp, seed)
    opt = torch.optim.Adam([gates.log_alpha], lr=hp.lr)
    loss_val = float("nan")
    for step in range(hp.steps):
        z = gates.sample()
        mask = dict(zip(gates.edges, z))
        with torch.enable_grad():
            loss = hp.lam * gates.expected_l0().mean()
            for s in parts:
                base, donor = ctx.sides(s)
                run = model.run(base=base, donor=donor, mask=mask)
                loss = loss + output_distance(ctx, ctx.reference(s), run, s, metric).mean()
        loss_val = float(loss.detach())
        if not math.isfinite(loss_val):
            raise DiscoveryError(
                f"mask optimisation diverged at step {step}: loss={loss_val}, "
                f"log_alpha range [{float(gates.log_alpha.min()):.3g}, {float(gates.log_alpha.max()):.3g}]"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
    return dict(zip(gates.edges, gates.final().tolist())), loss_val


def mask_scores(ctx: PatchContext, cfg: DiscoveryConfig) -> tuple[EdgeScores, dict]:
    hp = cfg.mask or MaskHParams()
    if cfg.metric == "acc":
        raise DiscoveryError("accuracy is not differentiable")
    if cfg.strategy != "NsDn" or hp.joint:
        m, loss = _train_mask(ctx, _parts(cfg.strategy), cfg.metric, hp, cfg.seed)
        return EdgeScores(m), {"final_loss": loss}
    ns, l_ns = _train_mask(ctx, ("Ns",), cfg.metric, hp, cfg.seed)
    dn, l_dn = _train_mask(ctx, ("Dn",), cfg.metric, hp, cfg.seed)
    return combine_masks(ns, dn), {"final_loss": l_ns + l_dn}


def combine_masks(ns: dict[EdgeId, float], dn: dict[EdgeId, float]) -> EdgeScores:
    """NsDn mask: per-edge average of the Ns and Dn masks."""
    return EdgeScores({e: 0.5 * (ns[e] + dn[e]) for e in ns})


def mask_discover(ctx: PatchContext, cfg: DiscoveryConfig) -> DiscoveryResult:
    scores, info = mask_scores(ctx, cfg)
    if cfg.k is not None:
        return DiscoveryResult(select_top_k(ctx.graph, scores, cfg.k), scores, info)
    thr = (cfg.mask or MaskHParams()).threshold
    return DiscoveryResult(
        ctx.graph.circuit(e for e, v in scores.scores.items() if v > thr), scores, info
    )


# -- dispatch ----------------------------------------------------------------

def discover(ctx: PatchContext, cfg: DiscoveryConfig) -> DiscoveryResult:
    if cfg.k is not None and cfg.k > len(ctx.graph.edges):
        raise DiscoveryError(f"k exceeds edge count ({cfg.k} > {len(ctx.graph.edges)})")
    fn = {"greedy": greedy_discover, "linear": linear_discover, "mask": mask_discover}[cfg.algorithm]
    return fn(ctx, cfg)


def discover_pair(ctx: PatchContext, base: DiscoveryConfig, k: int) -> tuple[Circuit, Circuit]:
    """Ns and Dn circuits of exactly k edges each."""
    if k > len(ctx.graph.edges):
        raise DiscoveryError(f"k exceeds edge count ({k} > {len(ctx.graph.edges)})")
    ns = discover(ctx, base.with_(strategy="Ns", k=k)).circuit
    dn = discover(ctx, base.with_(strategy="Dn", k=k)).circuit
    return ns, dn
