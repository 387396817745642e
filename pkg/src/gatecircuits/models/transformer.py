"""Small attention-only-plus-MLP transformer with an exactly additive residual stream.

No layer norm: every component reads the plain sum of all earlier components'
outputs, so the residual stream decomposes into one edge per (sender, receiver).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn.functional as F

from ..graph import GraphError, NodeId
from .base import DTYPE, EdgeModel
from .spec import ModelSpec, build_graph
from .tasks import TaskDataset, TaskError, make_task

log = logging.getLogger(__name__)

FORMAT_TAG = "gatecircuits-model"
FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    steps: int = 4000
    batch_size: int = 128
    lr: float = 3e-3
    weight_decay: float = 0.0
    accuracy_floor: float = 0.95
    eval_every: int = 100
    train_pairs: int = 8192
    seed: int = 0


class TrainingFailed(RuntimeError):
    pass


class TrainedTransformer(EdgeModel):
    family = "trained-transformer"

    def __init__(self, spec: ModelSpec):
        if spec.family != "trained-transformer":
            raise GraphError("spec is not a trained transformer")
        if spec.d_model % spec.heads:
            raise GraphError("d_model must be divisible by heads")
        self.spec = spec
        self.graph = build_graph(spec)
        gen = torch.Generator().manual_seed(spec.seed)
        d, V, T, H = spec.d_model, spec.vocab_size, spec.seq_len, spec.heads
        dh = d // H

        def p(*shape, scale):
            return (torch.randn(*shape, generator=gen, dtype=DTYPE) * scale).requires_grad_()

        self.params: dict[str, torch.Tensor] = {
            "W_E": p(V, d, scale=1.0 / math.sqrt(d)),
            "W_P": p(T, d, scale=1.0 / math.sqrt(d)),
            "W_U": p(d, V, scale=1.0 / math.sqrt(d)),
        }
        for layer in range(spec.layers):
            for h in range(H):
                for name in ("Q", "K", "V"):
                    self.params[f"{layer}.{h}.W_{name}"] = p(d, dh, scale=1.0 / math.sqrt(d))
                self.params[f"{layer}.{h}.W_O"] = p(dh, d, scale=1.0 / math.sqrt(dh))
            self.params[f"{layer}.W_1"] = p(d, spec.d_mlp, scale=1.0 / math.sqrt(d))
            self.params[f"{layer}.b_1"] = torch.zeros(spec.d_mlp, dtype=DTYPE, requires_grad=True)
            self.params[f"{layer}.W_2"] = p(spec.d_mlp, d, scale=1.0 / math.sqrt(spec.d_mlp))
            self.params[f"{layer}.b_2"] = torch.zeros(d, dtype=DTYPE, requires_grad=True)
        T_ = spec.seq_len
        self._causal = torch.triu(torch.ones(T_, T_, dtype=torch.bool), diagonal=1)
        self.trained_steps = 0
        self.train_accuracy: float | None = None

    # -- EdgeModel hooks ----------------------------------------------------

    def encode(self, inputs) -> torch.Tensor:
        return torch.as_tensor(inputs, dtype=torch.long)

    def check_inputs(self, inputs):
        if inputs.dim() != 2 or inputs.shape[1] != self.spec.seq_len:
            raise ValueError(
                f"expected token batch of shape (batch, {self.spec.seq_len}), got {tuple(inputs.shape)}"
            )
        if inputs.dtype != torch.long:
            raise ValueError("token batch must be integer")

    def source_value(self, node, tokens):
        return self.params["W_E"][tokens] + self.params["W_P"]

    def node_fn(self, node: NodeId, values):
        x = values[0]
        for v in values[1:]:
            x = x + v
        if node.kind == "attention-head":
            return self._head(node.layer, node.index, x)
        if node.kind == "mlp":
            return self._mlp(node.layer, x)
        return x[:, -1, :] @ self.params["W_U"]

    def to_logits(self, output):
        return output

    def _head(self, layer, h, x):
        P = self.params
        q = x @ P[f"{layer}.{h}.W_Q"]
        k = x @ P[f"{layer}.{h}.W_K"]
        v = x @ P[f"{layer}.{h}.W_V"]
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        T = x.shape[1]
        scores = scores.masked_fill(self._causal[:T, :T], float("-inf"))
        return torch.softmax(scores, dim=-1) @ v @ P[f"{layer}.{h}.W_O"]

    def _mlp(self, layer, x):
        P = self.params
        return F.gelu(x @ P[f"{layer}.W_1"] + P[f"{layer}.b_1"]) @ P[f"{layer}.W_2"] + P[f"{layer}.b_2"]

    def fast_logits(self, tokens: torch.Tensor) -> torch.Tensor:
        """Plain residual forward; equals the edge-wise forward with no patching."""
        resid = self.source_value(None, tokens)
        for layer in range(self.spec.layers):
            heads = [self._head(layer, h, resid) for h in range(self.spec.heads)]
            for out in heads:
                resid = resid + out
            resid = resid + self._mlp(layer, resid)
        return resid[:, -1, :] @ self.params["W_U"]

    def accuracy(self, dataset: TaskDataset) -> float:
        with torch.no_grad():
            logits = self.fast_logits(self.encode(dataset.clean_inputs()))
        labels = torch.tensor(dataset.clean_labels())
        return float((logits.argmax(-1) == labels).double().mean())

    # -- serialization ------------------------------------------------------

    def save(self, path) -> None:
        blob = {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "trained_steps": self.trained_steps,
            "train_accuracy": self.train_accuracy,
            "state": {k: v.detach().clone() for k, v in self.params.items()},
        }
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(blob, tmp)
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "TrainedTransformer":
        blob = torch.load(path, weights_only=True)
        if blob.get("format") != FORMAT_TAG or blob.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: not a version-{FORMAT_VERSION} {FORMAT_TAG} file")
        model = cls(ModelSpec.from_dict(blob["spec"]))
        for k, v in blob["state"].items():
            model.params[k] = v.to(DTYPE).requires_grad_()
        model.trained_steps = blob["trained_steps"]
        model.train_accuracy = blob["train_accuracy"]
        return model


def make_trained_transformer(
    spec: ModelSpec,
    task: str | TaskDataset = "induction",
    train_config: TrainConfig | None = None,
    *,
    require_floor: bool = True,
) -> TrainedTransformer:
    """Train on last-position next-token prediction until the accuracy floor
    is met on a held-out set or the step budget runs out."""
    cfg = train_config or TrainConfig()
    if spec.vocab_size < 2:
        raise TaskError("degenerate task: vocab_size must exceed 1")
    model = TrainedTransformer(spec)
    kind = task if isinstance(task, str) else task.kind
    task_cfg = {"vocab_size": spec.vocab_size, "seq_len": spec.seq_len}
    train = make_task(kind, {**task_cfg, "n": cfg.train_pairs}, seed=cfg.seed + 1)
    held = task if isinstance(task, TaskDataset) else make_task(kind, {**task_cfg, "n": 512}, seed=cfg.seed + 2)
    if cfg.steps == 0:
        model.train_accuracy = model.accuracy(held)
        if require_floor and model.train_accuracy < cfg.accuracy_floor:
            raise TrainingFailed(f"accuracy {model.train_accuracy:.3f} below floor after 0 steps")
        return model
    xs = torch.tensor(train.clean_inputs() + train.corrupted_inputs(), dtype=torch.long)
    ys = torch.tensor(train.clean_labels() + train.corrupted_labels(), dtype=torch.long)
    opt = torch.optim.AdamW(list(model.params.values()), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = random.Random(cfg.seed)
    acc = 0.0
    for step in range(1, cfg.steps + 1):
        idx = torch.tensor(rng.sample(range(len(xs)), min(cfg.batch_size, len(xs))))
        loss = F.cross_entropy(model.fast_logits(xs[idx]), ys[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        model.trained_steps = step
        if step % cfg.eval_every == 0 or step == cfg.steps:
            acc = model.accuracy(held)
            log.debug("step %d loss %.4f acc %.3f", step, loss.item(), acc)
            if acc >= cfg.accuracy_floor:
                break
    model.train_accuracy = acc
    if require_floor and acc < cfg.accuracy_floor:
        raise TrainingFailed(
            f"accuracy {acc:.3f} below floor {cfg.accuracy_floor} after {model.trained_steps} steps"
        )
    return model


CACHE_ENV = "GATECIRCUITS_CACHE"


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "gatecircuits")


def cached_trained_transformer(spec: ModelSpec, train_config: TrainConfig | None = None) -> TrainedTransformer:
    """Train once per (spec, training config) and reuse the saved weights afterwards."""
    cfg = train_config or TrainConfig()
    key = hashlib.sha256(
        json.dumps({"spec": spec.to_dict(), "train": asdict(cfg), "v": FORMAT_VERSION}, sort_keys=True).encode()
    ).hexdigest()[:16]
    path = cache_dir() / f"transformer-{key}.pt"
    if path.exists():
        return TrainedTransformer.load(path)
    model = make_trained_transformer(spec, "induction", cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    return model
