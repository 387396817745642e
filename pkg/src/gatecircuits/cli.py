"""Command-line interface.

Exit codes: 0 success, 1 experiment or criterion failure, 2 invalid input.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import warnings
from pathlib import Path

import click
import yaml

from .config import SEED_ENV, ConfigError, ExperimentConfig, build_dataset, build_model, load_config
from .discovery import DiscoveryError, discover, discover_pair
from .evaluation import EvaluationError, minimal_subset_oracle
from .gates import GateError, SamplerConfig, best_ratio, classify_gates, ratio_sweep
from .graph import GraphError
from .harness import (
    PLOT_KINDS,
    ReportError,
    RunReport,
    atomic_write,
    derive_seed,
    dumps_report,
    emit_plot_data,
    new_report,
    report_failed,
    run_experiment,
)
from .intervention import METRICS, InterventionError, PatchContext
from .models.tasks import TaskError

INPUT_ERRORS = (ConfigError, DiscoveryError, EvaluationError, GateError, GraphError,
                InterventionError, ReportError, TaskError)
PLANTED_DEFAULT = {"preset": "planted", "kinds": ["AND", "OR", "ADDER"] * 3, "sizes": [2] * 9}
MODEL_PRESETS = {
    "toy-and": {"preset": "toy", "gate": "AND"},
    "toy-or": {"preset": "toy", "gate": "OR"},
    "toy-adder": {"preset": "toy", "gate": "ADDER"},
    "mixed": {"preset": "mixed"},
    "planted": PLANTED_DEFAULT,
    "transformer": {"family": "trained-transformer", "seed": 0},
}


class InputError(click.ClickException):
    exit_code = 2


def _fail_input(exc: Exception):
    raise InputError(str(exc)) from exc


def _model_entry(model: str) -> dict:
    """A preset name or a YAML/JSON file holding a model mapping."""
    if model in MODEL_PRESETS:
        return dict(MODEL_PRESETS[model])
    path = Path(model)
    if not path.exists():
        raise InputError(f"unknown model {model!r}: use one of {sorted(MODEL_PRESETS)} or a file path")
    data = yaml.safe_load(path.read_text())
    if not isinstance(data, dict):
        raise InputError(f"{model}: expected a mapping")
    return data.get("model", data)


def _seed(seed: int | None) -> int:
    if os.environ.get(SEED_ENV):
        try:
            return int(os.environ[SEED_ENV])
        except ValueError:
            raise InputError(f"{SEED_ENV} is not an integer") from None
    return seed if seed is not None else 0


def _context(model: str, task: str | None, seed: int, metric: str = "kl", algo: str = "greedy"):
    cfg = ExperimentConfig(
        model=_model_entry(model), algorithms=[{"algorithm": algo, "metric": metric}], k_grid=[0],
        task={"kind": task} if task else None, seed=seed,
    )
    m, kinds = build_model(cfg)
    data = build_dataset(cfg, m, derive_seed(seed, "dataset"))
    return PatchContext(m, data, seed=derive_seed(seed, "ablation")), kinds


def _emit(data: dict, out: str | None) -> None:
    text = dumps_report(data)
    if out:
        atomic_write(out, text)
    else:
        click.echo(text, nl=False)


def _metric_default(model: str) -> str:
    return "kl" if model == "transformer" else "sink"


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def cli(verbose: int) -> None:
    """Circuit discovery and AND/OR/ADDER gate analysis."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


model_opt = click.option("--model", default="toy-and", show_default=True,
                         help=f"Preset ({', '.join(sorted(MODEL_PRESETS))}) or a YAML model file.")
seed_opt = click.option("--seed", type=int, default=None, help=f"Root seed (overridden by {SEED_ENV}).")
metric_opt = click.option("--metric", type=click.Choice(METRICS), default=None,
                          help="Output distance; defaults to sink for analytic models, kl otherwise.")
out_opt = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write JSON here.")


@cli.command("discover")
@model_opt
@click.option("--algo", type=click.Choice(["greedy", "linear", "mask"]), default="greedy", show_default=True)
@click.option("--strategy", type=click.Choice(["ns", "dn", "nsdn"], case_sensitive=False), default="ns",
              show_default=True)
@click.option("--k", type=int, default=None, help="Exact edge count.")
@click.option("--tau", type=float, default=None, help="Threshold (instead of --k).")
@click.option("--task", default=None, help="Task kind (induction, copy, gate-truth-table).")
@metric_opt
@seed_opt
@out_opt
def discover_cmd(model, algo, strategy, k, tau, task, metric, seed, out):
    """Find a circuit with one algorithm and strategy."""
    from .discovery import DiscoveryConfig

    seed = _seed(seed)
    metric = metric or _metric_default(model)
    try:
        cfg = DiscoveryConfig(algo, strategy, tau=tau, k=k, metric=metric, seed=seed)
        ctx, _ = _context(model, task, seed, metric, algo)
        res = discover(ctx, cfg)
    except INPUT_ERRORS as exc:
        _fail_input(exc)
    scores = {e.name: v for e, v in sorted(res.scores.scores.items(), key=lambda kv: ctx.graph.edge_index(kv[0]))}
    _emit(new_report(
        "discover", model=_model_entry(model), algorithm=algo, strategy=cfg.strategy, k=k, tau=tau,
        metric=metric, seed=seed, circuit=res.circuit.names(), size=len(res.circuit),
        sparsity=res.circuit.sparsity_ratio, scores=scores,
    ), out)


def _load_circuit(ctx, path: str):
    data = json.loads(Path(path).read_text())
    names = data.get("circuit") if isinstance(data, dict) else data
    if not isinstance(names, list):
        raise InputError(f"{path}: no circuit edge list")
    return ctx.graph.circuit(names)


@cli.command()
@model_opt
@click.option("--algo", type=click.Choice(["greedy", "linear", "mask"]), default="greedy", show_default=True)
@click.option("--k", type=int, default=None, help="Edge count for both circuits (runs discovery).")
@click.option("--ns", "ns_path", type=click.Path(exists=True), default=None, help="Ns circuit (discover output).")
@click.option("--dn", "dn_path", type=click.Path(exists=True), default=None, help="Dn circuit (discover output).")
@metric_opt
@seed_opt
@out_opt
def classify(model, algo, k, ns_path, dn_path, metric, seed, out):
    """Label edges AND / OR / ADDER from an Ns and a Dn circuit of equal size."""
    from .discovery import DiscoveryConfig

    seed = _seed(seed)
    metric = metric or _metric_default(model)
    if (ns_path is None) != (dn_path is None):
        raise InputError("give both --ns and --dn, or neither")
    if ns_path is None and k is None:
        raise InputError("give --k, or --ns and --dn")
    try:
        ctx, _ = _context(model, None, seed, metric, algo)
        if ns_path:
            c_ns, c_dn = _load_circuit(ctx, ns_path), _load_circuit(ctx, dn_path)
        else:
            c_ns, c_dn = discover_pair(ctx, DiscoveryConfig(algo, k=k, metric=metric, seed=seed), k)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            labeling = classify_gates(c_ns, c_dn)
    except INPUT_ERRORS as exc:
        _fail_input(exc)
    for w in caught:
        click.echo(f"warning: {w.message}", err=True)
    _emit(new_report("classify", model=_model_entry(model), labels=labeling.to_dict(),
                     counts=labeling.counts(), ns=c_ns.names(), dn=c_dn.names()), out)


@cli.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@out_opt
@click.option("--csv", "csv_kinds", multiple=True, type=click.Choice(PLOT_KINDS),
              help="Also write <out>.<kind>.csv for each kind given.")
def evaluate(config, out, csv_kinds):
    """Run an experiment grid from a config file."""
    try:
        cfg = load_config(config)
    except ConfigError as exc:
        _fail_input(exc)
    out = out or cfg.output
    report = run_experiment(cfg, out)
    if not out:
        click.echo(report.to_json(), nl=False)
    for kind in csv_kinds:
        try:
            text = emit_plot_data(report, kind)
        except ReportError as exc:
            click.echo(f"csv {kind}: {exc}", err=True)
            continue
        if out:
            atomic_write(f"{out}.{kind}.csv", text)
        else:
            click.echo(text, nl=False)
    failed = report_failed(report)
    click.echo(f"{len(report.cells)} cells, {'with failures' if failed else 'all ok'}", err=True)
    sys.exit(1 if failed else 0)


@cli.command("sweep-misalignment")
@click.option("--model", default="planted", show_default=True, help="Preset or YAML model file.")
@click.option("--algo", type=click.Choice(["greedy", "linear", "mask"]), default="linear", show_default=True)
@click.option("--k-ns", type=int, required=True, help="Edge count of the Ns circuit.")
@click.option("--k-dn", "k_dn", default=None, help="Dn range LO:HI (default: k-ns +/- 40%).")
@click.option("--samples", type=int, default=30, show_default=True)
@click.option("--m", "m_const", type=float, default=1.5, show_default=True, help="OR-score offset.")
@metric_opt
@seed_opt
@out_opt
def sweep_misalignment(model, algo, k_ns, k_dn, samples, m_const, metric, seed, out):
    """Score AND/OR misalignment while the Dn circuit size varies."""
    from .discovery import DiscoveryConfig

    seed = _seed(seed)
    metric = metric or _metric_default(model)
    if k_dn:
        try:
            lo, hi = (int(x) for x in k_dn.split(":"))
        except ValueError:
            raise InputError("--k-dn must look like LO:HI") from None
    else:
        lo, hi = round(0.6 * k_ns), round(1.4 * k_ns)
    try:
        ctx, _ = _context(model, None, seed, metric, algo)
        hi = min(hi, len(ctx.graph.edges))
        cfg = DiscoveryConfig(algo, k=k_ns, metric=metric, seed=seed)
        reports = ratio_sweep(ctx, cfg, k_ns, range(lo, hi + 1), SamplerConfig(samples=samples, seed=seed),
                              metric, m_const)
        best = best_ratio(reports)
    except INPUT_ERRORS as exc:
        _fail_input(exc)
    rows = [r.to_dict() | {"total": r.total, "algorithm": algo} for r in reports]
    _emit(new_report("misalignment-sweep", model=_model_entry(model), seed=seed, sweep=rows,
                     best={"k_dn": best.k_dn, "ratio": best.ratio, "total": best.total}), out)


@cli.command()
@click.option("--model", default="mixed", show_default=True, help="Preset or YAML model file (gate networks only).")
@click.option("--mode", type=click.Choice(["faithful", "complete", "both"]), default="both", show_default=True)
@out_opt
def oracle(model, mode, out):
    """Enumerate edge subsets for the smallest optimally faithful or complete circuit."""
    modes = ("faithful", "complete") if mode == "both" else (mode,)
    try:
        ctx, _ = _context(model, None, 0, "sink")
        result = {}
        for md in modes:
            r = minimal_subset_oracle(ctx, "sink", md)
            result[md] = {"circuit": r.circuit.names(), "ties": r.ties, "value": r.value}
    except INPUT_ERRORS as exc:
        _fail_input(exc)
    _emit(new_report("oracle", model=_model_entry(model), **result), out)


def _parse_criteria(text: str | None) -> list[int] | None:
    if not text:
        return None
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError("--criteria takes a comma-separated list such as 1,2,3") from None


@cli.command()
@click.option("--criteria", default=None, help="Comma-separated subset, e.g. 1,2,3 (default: all).")
@seed_opt
@out_opt
def verify(criteria, seed, out):
    """Run the acceptance suite and print one line per criterion."""
    from .acceptance import CHECKS, run_acceptance_suite

    numbers = _parse_criteria(criteria)
    if numbers and any(n not in CHECKS for n in numbers):
        raise InputError(f"criteria must be among {sorted(CHECKS)}")
    results, report = run_acceptance_suite(numbers, _seed(seed), echo=click.echo)
    if out:
        RunReport(report, {f"criterion {r.number}": r.seconds for r in results}).write(out)
    passed = sum(r.passed for r in results)
    click.echo(f"{passed}/{len(results)} criteria passed")
    sys.exit(0 if passed == len(results) else 1)


@cli.command("plot-data")
@click.argument("report", type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(PLOT_KINDS), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write CSV here.")
def plot_data(report, kind, out):
    """Export one view of a report as CSV."""
    try:
        text = emit_plot_data(RunReport.load(report), kind)
    except ReportError as exc:
        _fail_input(exc)
    if out:
        atomic_write(out, text)
    else:
        click.echo(text, nl=False)


def main() -> None:
    cli(prog_name="gatecircuits")


if __name__ == "__main__":
    main()
