"""Synthetic tasks: induction, copy, and gate truth tables."""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class TaskPair:
    clean: tuple
    corrupted: tuple
    clean_label: int | None = None
    corrupted_label: int | None = None


@dataclass(frozen=True)
class TaskDataset:
    kind: str
    pairs: tuple[TaskPair, ...]

    def __post_init__(self):
        if not self.pairs:
            raise TaskError("dataset is empty")
        for p in self.pairs:
            if p.clean_label is not None and p.clean_label == p.corrupted_label:
                raise TaskError("clean and corrupted labels must differ")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def has_labels(self) -> bool:
        return self.pairs[0].clean_label is not None

    def clean_inputs(self) -> list:
        return [list(p.clean) for p in self.pairs]

    def corrupted_inputs(self) -> list:
        return [list(p.corrupted) for p in self.pairs]

    def clean_labels(self) -> list[int]:
        return [p.clean_label for p in self.pairs]

    def corrupted_labels(self) -> list[int]:
        return [p.corrupted_label for p in self.pairs]

    def subset(self, idx: Sequence[int]) -> "TaskDataset":
        return TaskDataset(self.kind, tuple(self.pairs[i] for i in idx))

    def save(self, path) -> None:
        lines = [
            json.dumps(
                {
                    "kind": self.kind,
                    "clean": list(p.clean),
                    "corrupted": list(p.corrupted),
                    "clean_label": p.clean_label,
                    "corrupted_label": p.corrupted_label,
                }
            )
            for p in self.pairs
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "TaskDataset":
        pairs, kind = [], None
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            r = json.loads(line)
            kind = r["kind"]
            pairs.append(
                TaskPair(tuple(r["clean"]), tuple(r["corrupted"]), r["clean_label"], r["corrupted_label"])
            )
        return cls(kind, tuple(pairs))


def make_task(kind: str, config: dict | None = None, seed: int = 0) -> TaskDataset:
    """Build a dataset.

    induction: ``... A B ... A`` with label B; the corrupted input swaps B for a
    distinct token B' (label B'). copy: label is the first token; the corrupted
    input replaces it. gate-truth-table: every source assignment of a gate
    network against the all-zero corrupted assignment (no labels).
    """
    config = dict(config or {})
    rng = random.Random(seed)
    if kind == "induction":
        return _induction(rng, **config)
    if kind == "copy":
        return _copy(rng, **config)
    if kind == "gate-truth-table":
        return _truth_table(**config)
    raise TaskError(f"unknown task kind {kind!r}")


def _induction(rng: random.Random, vocab_size: int = 20, seq_len: int = 12, n: int = 256) -> TaskDataset:
    if vocab_size <= 1:
        raise TaskError("degenerate task: vocab_size must exceed 1")
    if vocab_size < 3:
        raise TaskError("vocab too small to produce distinct corrupted labels")
    if seq_len < 4:
        raise TaskError("induction needs seq_len >= 4")
    pairs = []
    for _ in range(n):
        a = rng.randrange(vocab_size)
        b = rng.choice([t for t in range(vocab_size) if t != a])
        b2 = rng.choice([t for t in range(vocab_size) if t not in (a, b)])
        pos = rng.randrange(0, seq_len - 2)
        fillers = [t for t in range(vocab_size) if t not in (a, b, b2)] or [b]
        seq = [rng.choice(fillers) for _ in range(seq_len)]
        seq[pos], seq[pos + 1], seq[-1] = a, b, a
        corrupted = list(seq)
        corrupted[pos + 1] = b2
        pairs.append(TaskPair(tuple(seq), tuple(corrupted), b, b2))
    return TaskDataset("induction", tuple(pairs))


def _copy(rng: random.Random, vocab_size: int = 20, seq_len: int = 8, n: int = 256) -> TaskDataset:
    if vocab_size < 2:
        raise TaskError("degenerate task: vocab too small to produce distinct corrupted labels")
    pairs = []
    for _ in range(n):
        seq = [rng.randrange(vocab_size) for _ in range(seq_len)]
        alt = rng.choice([t for t in range(vocab_size) if t != seq[0]])
        corrupted = [alt] + seq[1:]
        pairs.append(TaskPair(tuple(seq), tuple(corrupted), seq[0], alt))
    return TaskDataset("copy", tuple(pairs))


def _truth_table(n_sources: int | None = None, spec=None) -> TaskDataset:
    if n_sources is None:
        if spec is None:
            raise TaskError("gate-truth-table needs n_sources or spec")
        n_sources = sum(1 for g in spec.gates if not g.parents)
    if n_sources < 1:
        raise TaskError("gate network has no sources")
    zero = tuple(0.0 for _ in range(n_sources))
    pairs = tuple(
        TaskPair(tuple(float(b) for b in bits), zero)
        for bits in itertools.product((0, 1), repeat=n_sources)
    )
    return TaskDataset("gate-truth-table", pairs)


def gate_dataset(n_sources: int) -> TaskDataset:
    """Single all-ones clean assignment against the all-zero corrupted one."""
    return TaskDataset(
        "gate",
        (TaskPair(tuple(1.0 for _ in range(n_sources)), tuple(0.0 for _ in range(n_sources))),),
    )
