"""Versioned experiment configuration: parsing, validation, model and dataset wiring."""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .discovery import ALGORITHMS, DiscoveryConfig, MaskHParams
from .intervention import METRICS, STRATEGIES, normalize_metric, normalize_strategy
from .models.analytic import make_gate_network, make_gate_toy
from .models.base import EdgeModel
from .models.spec import FAMILIES, ModelSpec, mixed_spec, planted_network
from .models.tasks import TaskDataset, TaskPair, gate_dataset, make_task

CONFIG_VERSION = 1
SEED_ENV = "GATECIRCUITS_SEED"
EVALUATIONS = (
    "faithfulness", "completeness", "incompleteness-sampled", "randomness",
    "gates", "misalignment", "oracle", "box-ablation",
)
DEFAULT_OPTIONS = {
    "randomness_runs": 5,
    "incompleteness_samples": 30,
    "misalignment_samples": 30,
    "box_repeats": 30,
    "dataset_size": 64,
    "m": 1.5,
}


class ConfigError(ValueError):
    """Raised with every violated field listed."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid config:\n  " + "\n  ".join(problems))


@dataclass
class ExperimentConfig:
    model: dict
    algorithms: list[dict]
    k_grid: list[int]
    strategies: list[str] = field(default_factory=lambda: ["Ns"])
    evaluations: list[str] = field(default_factory=lambda: ["faithfulness", "completeness"])
    task: dict | None = None
    seed: int = 0
    output: str | None = None
    options: dict = field(default_factory=dict)
    version: int = CONFIG_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.version != CONFIG_VERSION:
            problems.append(f"version: unsupported version {self.version!r} (expected {CONFIG_VERSION})")
        if not isinstance(self.model, dict) or not self.model:
            problems.append("model: must be a non-empty mapping")
        else:
            try:
                model_spec(self.model)
            except Exception as exc:  # noqa: BLE001 - collected for the error report
                problems.append(f"model: {exc}")
        if not self.algorithms:
            problems.append("algorithms: grid must be nonempty")
        for i, a in enumerate(self.algorithms or []):
            if not isinstance(a, dict) or a.get("algorithm") not in ALGORITHMS:
                problems.append(f"algorithms[{i}].algorithm: must be one of {list(ALGORITHMS)}")
                continue
            try:
                normalize_metric(a.get("metric", "kl"))
            except ValueError:
                problems.append(f"algorithms[{i}].metric: must be one of {list(METRICS)}")
            unknown = set(a) - {"algorithm", "metric", "mask", "k_search", "tau"}
            if unknown:
                problems.append(f"algorithms[{i}]: unknown keys {sorted(unknown)}")
        if not self.k_grid:
            problems.append("k_grid: grid must be nonempty")
        elif any(not isinstance(k, int) or isinstance(k, bool) or k < 0 for k in self.k_grid):
            problems.append("k_grid: entries must be non-negative integers")
        if not self.strategies:
            problems.append("strategies: must be nonempty")
        for s in self.strategies or []:
            try:
                normalize_strategy(s)
            except ValueError:
                problems.append(f"strategies: unknown strategy {s!r} (use {list(STRATEGIES)})")
        for e in self.evaluations:
            if e not in EVALUATIONS:
                problems.append(f"evaluations: unknown evaluation {e!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            problems.append("seed: must be an integer")
        unknown = set(self.options) - set(DEFAULT_OPTIONS)
        if unknown:
            problems.append(f"options: unknown keys {sorted(unknown)}")
        if problems:
            raise ConfigError(problems)

    def option(self, name: str):
        return self.options.get(name, DEFAULT_OPTIONS[name])

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "model": copy.deepcopy(self.model),
            "task": copy.deepcopy(self.task),
            "algorithms": copy.deepcopy(self.algorithms),
            "k_grid": list(self.k_grid),
            "strategies": list(self.strategies),
            "evaluations": list(self.evaluations),
            "seed": self.seed,
            "output": self.output,
            "options": dict(self.options),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError(["<root>: config must be a mapping"])
        known = {"version", "model", "task", "algorithms", "k_grid", "strategies",
                 "evaluations", "seed", "output", "options"}
        problems = [f"{k}: unknown field" for k in sorted(set(d) - known)]
        problems += [f"{k}: required field missing" for k in ("model", "algorithms", "k_grid") if k not in d]
        if problems:
            raise ConfigError(problems)
        return cls(**{k: v for k, v in d.items() if v is not None or k == "task"})

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def discovery_config(self, algo: dict, strategy: str, k: int, seed: int) -> DiscoveryConfig:
        mask = MaskHParams(**algo["mask"]) if algo.get("mask") else None
        return DiscoveryConfig(
            algorithm=algo["algorithm"],
            strategy=strategy,
            k=k,
            metric=algo.get("metric", "kl"),
            seed=seed,
            mask=mask if algo["algorithm"] == "mask" else None,
            k_search=algo.get("k_search", "bisect"),
        )


def load_config(path) -> ExperimentConfig:
    """Parse a YAML or JSON config; ``GATECIRCUITS_SEED`` overrides its seed."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError([f"<file>: {exc}"]) from exc
    if isinstance(raw, dict) and os.environ.get(SEED_ENV):
        try:
            raw["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError([f"{SEED_ENV}: not an integer"]) from None
    return ExperimentConfig.from_dict(raw)


# -- wiring --------------------------------------------------------------------

def model_spec(m: dict) -> tuple[ModelSpec, dict | None]:
    """Resolve a model entry to a spec (plus planted gate kinds, when known).

    Accepted forms: ``{preset: toy, gate: AND}``, ``{preset: mixed}``,
    ``{preset: planted, kinds: [...], sizes: [...], top: ADDER}``, or a full
    spec mapping with ``family``.
    """
    preset = m.get("preset")
    if preset == "toy":
        spec, _ = make_gate_toy(m.get("gate", "AND"), **{k: m[k] for k in ("bias1", "bias2") if k in m})
        return spec, None
    if preset == "mixed":
        spec = mixed_spec()
        return spec, {g.node: g.gate for g in spec.gates if g.parents and g.node.kind != "output"}
    if preset == "planted":
        pn = planted_network(list(m["kinds"]), list(m["sizes"]), m.get("top", "ADDER"))
        return pn.spec, pn.kinds
    if preset is not None:
        raise ValueError(f"unknown preset {preset!r}")
    if m.get("family") not in FAMILIES:
        raise ValueError(f"family must be one of {list(FAMILIES)}")
    body = {k: v for k, v in m.items() if k not in ("weights", "train")}
    spec = ModelSpec.from_dict(body)
    kinds = {g.node: g.gate for g in spec.gates if g.parents and g.node.kind != "output"} if spec.family == "gate-network" else None
    return spec, kinds


def build_model(cfg: ExperimentConfig) -> tuple[EdgeModel, dict | None]:
    spec, kinds = model_spec(cfg.model)
    if spec.family != "trained-transformer":
        return make_gate_network(spec), kinds
    from .models.transformer import TrainConfig, TrainedTransformer, cached_trained_transformer

    weights = cfg.model.get("weights")
    if weights and Path(weights).exists():
        return TrainedTransformer.load(weights), None
    model = cached_trained_transformer(spec, TrainConfig(**cfg.model.get("train", {})))
    if weights:
        model.save(weights)
    return model, None


def build_dataset(cfg: ExperimentConfig, model: EdgeModel, seed: int) -> TaskDataset:
    task = dict(cfg.task or {})
    if model.family == "toy-transformer":
        return TaskDataset("gate-toy", (TaskPair((0.0,), (0.0,)),))
    if model.family == "gate-network":
        if task.get("kind") == "gate-truth-table":
            return make_task("gate-truth-table", {"n_sources": len(model.sources)})
        return gate_dataset(len(model.sources))
    kind = task.pop("kind", "induction")
    task.setdefault("n", cfg.option("dataset_size"))
    task.setdefault("vocab_size", model.spec.vocab_size)
    task.setdefault("seq_len", model.spec.seq_len)
    return make_task(kind, task, seed)
