import hashlib
import json

import pytest

from gatecircuits.config import ExperimentConfig
from gatecircuits.harness import (
    REPORT_FORMAT,
    ReportError,
    RunReport,
    atomic_write,
    derive_seed,
    emit_plot_data,
    report_failed,
    run_experiment,
    timings_path,
)

AND_GRID = {
    "model": {"preset": "toy", "gate": "AND"},
    "algorithms": [{"algorithm": a, "metric": "sink"} for a in ("greedy", "linear", "mask")],
    "k_grid": [2],
    "strategies": ["Ns"],
    "evaluations": ["faithfulness", "completeness"],
}

MIXED_CURVES = {
    "model": {"preset": "mixed"},
    "algorithms": [{"algorithm": "greedy", "metric": "sink"}, {"algorithm": "linear", "metric": "sink"}],
    "k_grid": [0, 1, 2, 3, 4, 5],
    "strategies": ["Ns", "Dn"],
    "evaluations": ["faithfulness", "completeness", "gates"],
}


def run(d, **kw):
    return run_experiment(ExperimentConfig.from_dict({**d, **kw}))


def test_derive_seed_is_frozen():
    assert derive_seed(0, "dataset") == 456073352
    assert derive_seed(7, "greedy/sink/Ns/k=2", "discover") == 781730687
    digest = hashlib.sha256(b"3|a|1").digest()
    assert derive_seed(3, "a", 1) == int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


def test_and_toy_cells():
    rep = run(AND_GRID)
    assert [c["id"] for c in rep.cells] == ["greedy/sink/Ns/k=2", "linear/sink/Ns/k=2", "mask/sink/Ns/k=2"]
    assert all(c["status"] == "ok" and c["size"] == 2 for c in rep.cells)
    for c in rep.cells[:2]:
        assert sorted(c["circuit"]) == ["a0.0->m0", "a0.1->m0"]
    assert not report_failed(rep)
    assert rep.data["format"] == REPORT_FORMAT and rep.data["kind"] == "experiment"


def test_reruns_are_byte_identical(tmp_path):
    a = tmp_path / "a.json"
    run(AND_GRID, output=str(a))
    first = a.read_bytes()
    run(AND_GRID, output=str(a))
    assert a.read_bytes() == first
    assert "total" in json.loads(timings_path(a).read_text())


def test_adding_cells_keeps_existing_results():
    small = run(AND_GRID)
    big = run(AND_GRID, k_grid=[2, 3], strategies=["Ns", "Dn"])
    by_id = {c["id"]: c for c in big.cells}
    for c in small.cells:
        assert by_id[c["id"]] == c


def test_oversized_k_is_a_cell_error():
    rep = run(AND_GRID, k_grid=[2, 999])
    bad = [c for c in rep.cells if c["k"] == 999]
    assert len(bad) == 3
    assert all(c["status"] == "error" and "k exceeds edge count (999 > 5)" in c["error"] for c in bad)
    assert all(c["status"] == "ok" for c in rep.cells if c["k"] == 2)
    assert report_failed(rep)


def test_report_round_trip(tmp_path):
    rep = run(AND_GRID)
    path = tmp_path / "r.json"
    rep.write(path)
    assert RunReport.load(path).to_json() == rep.to_json()
    (tmp_path / "x.json").write_text("{}")
    with pytest.raises(ReportError, match="not a"):
        RunReport.load(tmp_path / "x.json")
    with pytest.raises(ReportError, match="cannot read"):
        RunReport.load(tmp_path / "missing.json")


def test_atomic_write_leaves_old_file_on_failure(tmp_path):
    path = tmp_path / "out.json"
    atomic_write(path, "old\n")

    class Boom:
        def __str__(self):
            raise RuntimeError("boom")

    with pytest.raises(TypeError):
        atomic_write(path, Boom())
    assert path.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.json"]


def test_curve_csv_shapes():
    rep = run(MIXED_CURVES)
    lines = emit_plot_data(rep, "faithfulness-curves").splitlines()
    assert lines[0] == "algorithm,strategy,k,size,metric,value"
    rows = [line.split(",") for line in lines[1:]]
    for algo in ("greedy", "linear"):
        for strategy in ("Ns", "Dn"):
            assert sum(r[0] == algo and r[1] == strategy for r in rows) == 6
    comp = emit_plot_data(rep, "completeness-curves").splitlines()
    assert len(comp) == 1 + 24
    props = emit_plot_data(rep, "proportions").splitlines()
    assert props[0] == "algorithm,k,label,count" and len(props) == 1 + 2 * 6 * 3


def test_plot_errors():
    with pytest.raises(ReportError, match="no cells"):
        emit_plot_data({"cells": []}, "faithfulness-curves")
    rep = run(AND_GRID)
    with pytest.raises(ReportError, match="box-ablation"):
        emit_plot_data(rep, "box-ablation")
    with pytest.raises(ReportError, match="misalignment"):
        emit_plot_data(rep, "misalignment-sweep")
    with pytest.raises(ReportError, match="unknown plot kind"):
        emit_plot_data(rep, "pie")


def test_box_ablation_section():
    rep = run({
        "model": {"preset": "mixed"},
        "algorithms": [{"algorithm": "linear", "metric": "sink"}],
        "k_grid": [3],
        "evaluations": ["box-ablation"],
        "options": {"box_repeats": 2},
    })
    lines = emit_plot_data(rep, "box-ablation").splitlines()
    assert lines[0] == "label,receiver,edges_removed,repeat,delta"
    assert len(lines) == 1 + 3 * 2 * 2
