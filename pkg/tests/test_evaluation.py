import pytest
from hypothesis import given, settings, strategies as st

from gatecircuits.discovery import DiscoveryConfig
from gatecircuits.evaluation import (
    EvalReport,
    EvaluationError,
    box_ablation,
    box_summary,
    completeness,
    faithfulness,
    gate_effects,
    hamming_stats,
    incompleteness_sampled,
    minimal_subset_oracle,
    proportions,
    randomness,
)
from gatecircuits.gates import Gate, GateLabeling, classify_gates
from gatecircuits.models.analytic import make_gate_network
from gatecircuits.models.spec import mixed_spec

KEPT = ["in0->g1.0", "in1->g1.0", "in2->g1.1", "g1.0->g2.0", "g1.1->g2.0", "g2.0->out"]


def test_faithfulness_and_completeness_are_dual(mixed):
    g = mixed.graph
    c = g.circuit(KEPT)
    rest = g.circuit(set(g.edges) - c.members)
    assert faithfulness(mixed, c, "sink") == {"kl": 0.0, "accuracy": None}
    assert completeness(mixed, c, "sink")["kl_of_removal"] == 2.0
    assert completeness(mixed, rest, "sink")["kl_of_removal"] == faithfulness(mixed, c, "sink")["kl"]


def test_incompleteness_sampled(mixed):
    c = mixed.graph.circuit(KEPT)
    assert incompleteness_sampled(mixed, c, n_samples=5, metric="sink") == {"mean": 0.2, "std": 0.4, "samples": 5}
    with pytest.raises(EvaluationError, match="too small"):
        incompleteness_sampled(mixed, mixed.graph.circuit(KEPT[:3]))
    with pytest.raises(EvaluationError, match="n_samples"):
        incompleteness_sampled(mixed, c, n_samples=0)


@pytest.mark.parametrize("algo", ["linear", "greedy"])
def test_seed_free_algorithms_have_zero_randomness(mixed, algo):
    r = randomness(mixed, DiscoveryConfig(algo, k=1, metric="sink"), 5, [0, 1, 2])
    assert r == {"mean_hamming": 0.0, "std": 0.0, "run_count": 3}


def test_randomness_input_checks(mixed):
    cfg = DiscoveryConfig("linear", k=1, metric="sink")
    with pytest.raises(EvaluationError, match="run-count"):
        randomness(mixed, cfg, 3, [0])
    with pytest.raises(EvaluationError, match="differ"):
        randomness(mixed, cfg, 3, [4, 4])
    with pytest.raises(EvaluationError):
        hamming_stats([])


def test_gate_effect_splits_evenly(mixed):
    e = mixed.graph.edge_by_name
    gate = Gate(e("in0->g1.0").receiver, "AND", frozenset([e("in0->g1.0"), e("in1->g1.0")]))
    assert gate_effects(mixed, [gate], "sink") == [
        {"receiver": "g1.0", "label": "AND", "size": 2, "gate_effect": 1.0, "edge_effect": 0.5}
    ]
    with pytest.raises(EvaluationError):
        gate_effects(mixed, [], "sink")


MIXED_EDGES = make_gate_network(mixed_spec()).graph.edge_order


@settings(max_examples=50, deadline=None)
@given(st.sets(st.sampled_from(MIXED_EDGES)), st.sets(st.sampled_from(MIXED_EDGES)))
def test_proportions_count_the_union(ns, dn):
    g = make_gate_network(mixed_spec()).graph
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lab = classify_gates(g.circuit(ns), g.circuit(dn))
    p = proportions(lab)
    assert sum(p.values()) == len(ns | dn)
    assert p["ADDER"] == len(ns & dn)


def test_proportions_keys_always_present():
    assert proportions(GateLabeling({})) == {"AND": 0, "OR": 0, "ADDER": 0}


def test_oracle_on_mixed(mixed):
    faithful = minimal_subset_oracle(mixed, mode="faithful")
    assert len(faithful.circuit) == 6 and faithful.ties == 2 and faithful.value == 0.0
    complete = minimal_subset_oracle(mixed, mode="complete")
    assert len(complete.circuit) == 6 and complete.ties == 2 and complete.value == 6.0


def test_oracle_limits(mixed, planted9):
    with pytest.raises(EvaluationError, match="too large"):
        minimal_subset_oracle(planted9[0])
    with pytest.raises(EvaluationError, match="mode"):
        minimal_subset_oracle(mixed, mode="both")


def test_box_ablation_pattern(planted9):
    ctx, kinds = planted9
    g = ctx.graph
    gates = [(n, lab, g.in_edges(n)) for n, lab in kinds.items()]
    rows = box_ablation(ctx, gates, repeats=4)
    summary = box_summary(rows)
    assert len(rows) == 2 * 4 * len(gates)
    by_label = {}
    for s in summary.values():
        by_label.setdefault(s["label"], set()).add((s["delta1"], s["delta2"]))
    assert by_label["AND"] == {(1.0, 1.0)}
    assert by_label["OR"] == {(0.0, 1.0)}
    assert (1.0, 2.0) in by_label["ADDER"]


def test_box_ablation_is_reproducible(planted9):
    ctx, kinds = planted9
    gates = [(n, lab, ctx.graph.in_edges(n)) for n, lab in kinds.items()]
    assert box_ablation(ctx, gates, repeats=3, seed=2) == box_ablation(ctx, gates, repeats=3, seed=2)


def test_eval_report_drops_empty_sections():
    assert EvalReport(faithfulness={"kl": 0.1}, gate_stats=[]).to_dict() == {"faithfulness": {"kl": 0.1}}
