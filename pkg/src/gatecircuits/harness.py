"""Config-driven experiment runner, deterministic JSON reports, and CSV plot data."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, build_dataset, build_model
from .discovery import discover
from .evaluation import (
    box_ablation,
    completeness,
    faithfulness,
    gate_effects,
    incompleteness_sampled,
    minimal_subset_oracle,
    ORACLE_MAX_EDGES,
    proportions,
    randomness,
)
from .gates import SamplerConfig, classify_gates, group_gates, misalignment_report
from .intervention import PatchContext

REPORT_FORMAT = "gatecircuits-report"
PLOT_KINDS = (
    "completeness-curves", "faithfulness-curves", "proportions", "box-ablation", "misalignment-sweep",
)


class ReportError(ValueError):
    pass


def derive_seed(root: int, *parts) -> int:
    """Stable 31-bit seed from the root seed and a tuple of labels."""
    text = "|".join([str(root), *map(str, parts)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big") & 0x7FFFFFFF


def dumps_report(data: dict) -> str:
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=True) + "\n"


def atomic_write(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunReport:
    """Report tree plus wall-clock timings.

    Timings live outside ``data`` so that ``data`` alone is byte-stable.
    """

    data: dict
    timings: dict = field(default_factory=dict)

    @property
    def cells(self) -> list[dict]:
        return self.data.get("cells", [])

    def to_json(self) -> str:
        return dumps_report(self.data)

    def write(self, path) -> None:
        atomic_write(path, self.to_json())
        atomic_write(timings_path(path), dumps_report(self.timings))

    @classmethod
    def load(cls, path) -> "RunReport":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ReportError(f"cannot read report {path}: {exc}") from exc
        if not isinstance(data, dict) or data.get("format") != REPORT_FORMAT:
            raise ReportError(f"{path} is not a {REPORT_FORMAT} document")
        tp = timings_path(path)
        timings = json.loads(tp.read_text()) if tp.exists() else {}
        return cls(data, timings)


def timings_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".timings.json")


def new_report(kind: str, **body) -> dict:
    return {"format": REPORT_FORMAT, "kind": kind, "engine_version": __version__, **body}


# -- grid runner ---------------------------------------------------------------

def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str))


def _distance_metric(model) -> str:
    return "kl" if model.family == "trained-transformer" else "sink"


def _cell_id(algo: dict, strategy: str, k: int) -> str:
    return f"{algo['algorithm']}/{algo.get('metric', 'kl')}/{strategy}/k={k}"


def _evaluate_cell(ctx, cfg: ExperimentConfig, dcfg, circuit, cell_id: str) -> tuple[dict, dict]:
    out, errors = {}, {}
    wanted = cfg.evaluations

    def attempt(name, fn):
        try:
            out[name] = fn()
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            errors[name] = f"{type(exc).__name__}: {exc}"

    if "faithfulness" in wanted:
        attempt("faithfulness", lambda: faithfulness(ctx, circuit))
    if "completeness" in wanted:
        attempt("completeness", lambda: completeness(ctx, circuit))
    if "incompleteness-sampled" in wanted:
        attempt("incompleteness_sampled", lambda: incompleteness_sampled(
            ctx, circuit, cfg.option("incompleteness_samples"),
            seed=derive_seed(cfg.seed, cell_id, "incompleteness"),
        ))
    if "randomness" in wanted:
        seeds = [derive_seed(cfg.seed, cell_id, "randomness", i) for i in range(cfg.option("randomness_runs"))]
        attempt("randomness", lambda: randomness(ctx, dcfg, dcfg.k, seeds))
    return out, errors


def _pair_entry(ctx, cfg, algo, k, circuits) -> dict:
    pair_id = f"{algo['algorithm']}/{algo.get('metric', 'kl')}/k={k}"
    entry = {"id": pair_id, "algorithm": algo["algorithm"], "metric": algo.get("metric", "kl"), "k": k}
    try:
        found = {}
        for s in ("Ns", "Dn"):
            found[s] = circuits.get(s)
            if found[s] is None:
                seed = derive_seed(cfg.seed, _cell_id(algo, s, k), "discover")
                found[s] = discover(ctx, cfg.discovery_config(algo, s, k, seed)).circuit
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            labeling = classify_gates(found["Ns"], found["Dn"])
        entry["labels"] = labeling.to_dict()
        entry["proportions"] = proportions(labeling)
        if "gates" in cfg.evaluations:
            gates = group_gates(labeling, ctx.graph)
            entry["gate_stats"] = gate_effects(ctx, gates) if gates else []
        if "misalignment" in cfg.evaluations:
            rep = misalignment_report(
                ctx, found["Ns"], found["Dn"],
                SamplerConfig(samples=cfg.option("misalignment_samples"), seed=derive_seed(cfg.seed, pair_id, "misalignment")),
                _distance_metric(ctx.model), cfg.option("m"),
            )
            entry["misalignment"] = rep.to_dict() | {"total": rep.total}
        entry["status"] = "ok"
    except Exception as exc:  # noqa: BLE001
        entry["status"] = "error"
        entry["error"] = f"{type(exc).__name__}: {exc}"
    return entry


def _oracle_section(ctx) -> dict:
    if len(ctx.graph.edges) > ORACLE_MAX_EDGES:
        return {"error": f"graph too large for enumeration: {len(ctx.graph.edges)} edges"}
    out = {}
    for mode in ("faithful", "complete"):
        r = minimal_subset_oracle(ctx, _distance_metric(ctx.model), mode)
        out[mode] = {"circuit": r.circuit.names(), "ties": r.ties, "value": r.value}
    return out


def _box_section(ctx, cfg, kinds) -> dict:
    if not kinds:
        return {"error": "box ablation needs a network with planted gate kinds"}
    gates = [(n, kind, ctx.graph.in_edges(n)) for n, kind in sorted(kinds.items(), key=lambda kv: ctx.graph.position(kv[0]))]
    rows = box_ablation(ctx, gates, cfg.option("box_repeats"), derive_seed(cfg.seed, "box-ablation"))
    return {"rows": rows}


def run_experiment(cfg: ExperimentConfig, output=None) -> RunReport:
    """Run the algorithm x strategy x k grid and, when an output path is given, write it atomically.

    Every cell draws its seeds from (root seed, cell identity, purpose), so
    adding cells to a grid leaves existing results untouched. Failures are
    recorded on the cell and the grid continues.
    """
    cfg.validate()
    t_start = time.perf_counter()
    timings: dict = {"cells": {}}
    model, kinds = build_model(cfg)
    dataset = build_dataset(cfg, model, derive_seed(cfg.seed, "dataset"))
    ctx = PatchContext(model, dataset, seed=derive_seed(cfg.seed, "ablation"))
    cells, found = [], {}
    for algo in cfg.algorithms:
        for strategy in cfg.strategies:
            for k in cfg.k_grid:
                cell_id = _cell_id(algo, strategy, k)
                t0 = time.perf_counter()
                seed = derive_seed(cfg.seed, cell_id, "discover")
                cell = {"id": cell_id, "algorithm": algo["algorithm"], "metric": algo.get("metric", "kl"),
                        "strategy": strategy, "k": k, "seed": seed}
                try:
                    dcfg = cfg.discovery_config(algo, strategy, k, seed)
                    res = discover(ctx, dcfg)
                    found[(id(algo), dcfg.strategy, k)] = res.circuit
                    cell.update(status="ok", circuit=res.circuit.names(), size=len(res.circuit),
                                sparsity=res.circuit.sparsity_ratio, info=_jsonable(res.info))
                    evals, errors = _evaluate_cell(ctx, cfg, dcfg, res.circuit, cell_id)
                    cell["evaluations"] = evals
                    if errors:
                        cell["evaluation_errors"] = errors
                except Exception as exc:  # noqa: BLE001
                    cell.update(status="error", error=f"{type(exc).__name__}: {exc}")
                cells.append(cell)
                timings["cells"][cell_id] = time.perf_counter() - t0
    data = new_report("experiment", config=cfg.to_dict(), cells=cells,
                      graph={"edges": len(ctx.graph.edges), "family": model.family})
    if {"gates", "misalignment"} & set(cfg.evaluations):
        pairs = []
        for algo in cfg.algorithms:
            for k in cfg.k_grid:
                t0 = time.perf_counter()
                got = {s: found.get((id(algo), s, k)) for s in ("Ns", "Dn")}
                pairs.append(_pair_entry(ctx, cfg, algo, k, got))
                timings["cells"][pairs[-1]["id"] + "/pair"] = time.perf_counter() - t0
        data["pairs"] = pairs
    for name, fn in (("oracle", lambda: _oracle_section(ctx)), ("box-ablation", lambda: _box_section(ctx, cfg, kinds))):
        if name in cfg.evaluations:
            t0 = time.perf_counter()
            try:
                data[name.replace("-", "_")] = fn()
            except Exception as exc:  # noqa: BLE001
                data[name.replace("-", "_")] = {"error": f"{type(exc).__name__}: {exc}"}
            timings[name] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start
    report = RunReport(_jsonable(data), timings)
    output = output or cfg.output
    if output:
        report.write(output)
    return report


def report_failed(report: RunReport) -> bool:
    d = report.data
    bad = [c for c in d.get("cells", []) if c.get("status") != "ok"]
    bad += [p for p in d.get("pairs", []) if p.get("status") != "ok"]
    bad += [s for s in (d.get("oracle"), d.get("box_ablation")) if isinstance(s, dict) and "error" in s]
    return bool(bad)


# -- plot data -------------------------------------------------------------------

_CURVE_FIELDS = {
    "completeness-curves": ("completeness", ("kl_of_removal", "accuracy_of_removal")),
    "faithfulness-curves": ("faithfulness", ("kl", "accuracy")),
}


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_plot_data(report: RunReport | dict, kind: str) -> str:
    """Flatten one view of a report into CSV text with a header row."""
    data = report.data if isinstance(report, RunReport) else report
    if kind not in PLOT_KINDS:
        raise ReportError(f"unknown plot kind {kind!r}; choose from {list(PLOT_KINDS)}")
    cells = data.get("cells") or []
    sweep = data.get("sweep") or []
    if not cells and not sweep:
        raise ReportError("no cells")
    if kind in _CURVE_FIELDS:
        section, metrics = _CURVE_FIELDS[kind]
        rows = [
            [c["algorithm"], c["strategy"], c["k"], c.get("size"), m, c["evaluations"][section][m]]
            for c in cells if section in c.get("evaluations", {})
            for m in metrics if c["evaluations"][section].get(m) is not None
        ]
        if not rows:
            raise ReportError(f"report has no {section} evaluation")
        return _csv(["algorithm", "strategy", "k", "size", "metric", "value"], rows)
    if kind == "proportions":
        rows = [
            [p["algorithm"], p["k"], lab, n]
            for p in data.get("pairs", []) if "proportions" in p
            for lab, n in p["proportions"].items()
        ]
        if not rows:
            raise ReportError("report has no gates evaluation")
        return _csv(["algorithm", "k", "label", "count"], rows)
    if kind == "box-ablation":
        box = data.get("box_ablation") or {}
        if not box.get("rows"):
            raise ReportError("report has no box-ablation evaluation")
        return _csv(
            ["label", "receiver", "edges_removed", "repeat", "delta"],
            [[r["label"], r["receiver"], r["edges_removed"], r["repeat"], r["delta"]] for r in box["rows"]],
        )
    entries = sweep or [p["misalignment"] | {"algorithm": p["algorithm"]}
                        for p in data.get("pairs", []) if "misalignment" in p]
    if not entries:
        raise ReportError("report has no misalignment evaluation")
    return _csv(
        ["algorithm", "k_ns", "k_dn", "ratio", "and_score", "or_score", "total"],
        [[e.get("algorithm"), e["k_ns"], e["k_dn"], e["ratio"], e["and_score"], e["or_score"], e["total"]]
         for e in entries],
    )
