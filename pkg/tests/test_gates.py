import warnings

import pytest
from hypothesis import given, settings, strategies as st

from gatecircuits.discovery import DiscoveryConfig, discover_pair
from gatecircuits.gates import (
    GateError,
    GateLabeling,
    MisalignmentReport,
    SamplerConfig,
    best_ratio,
    classify_gates,
    group_gates,
    misalignment_and,
    misalignment_or,
    misalignment_report,
    ratio_sweep,
    same_receiver_pairs,
)
from gatecircuits.graph import GraphError
from gatecircuits.models.analytic import make_gate_network
from gatecircuits.models.spec import mixed_spec

SAMPLER = SamplerConfig(samples=10)
MIXED_GRAPH = make_gate_network(mixed_spec()).graph


def names(edges):
    return sorted(e.name for e in edges)


def test_classify_small_example(mixed):
    g = mixed.graph
    ns = g.circuit(["in0->g1.0", "in1->g1.0", "g2.0->out"])
    dn = g.circuit(["in2->g1.1", "g2.0->out", "in3->g1.1"])
    lab = classify_gates(ns, dn)
    assert lab.to_dict() == {
        "and": ["in0->g1.0", "in1->g1.0"],
        "or": ["in2->g1.1", "in3->g1.1"],
        "adder": ["g2.0->out"],
    }
    assert lab.counts() == {"AND": 2, "OR": 2, "ADDER": 1}


def test_classify_warns_on_size_mismatch(mixed):
    g = mixed.graph
    with pytest.warns(UserWarning, match="sizes differ"):
        classify_gates(g.circuit(["in0->g1.0"]), g.empty_circuit())


def test_classify_rejects_foreign_graph(mixed, and_toy):
    with pytest.raises(GraphError):
        classify_gates(mixed.graph.empty_circuit(), and_toy.graph.empty_circuit())


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_swapping_circuits_swaps_and_with_or(data):
    g = MIXED_GRAPH
    pick = st.sets(st.sampled_from(g.edge_order))
    ns, dn = g.circuit(data.draw(pick)), g.circuit(data.draw(pick))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = classify_gates(ns, dn), classify_gates(dn, ns)
    flip = {"AND": "OR", "OR": "AND", "ADDER": "ADDER"}
    assert b.labels == {e: flip[lab] for e, lab in a.labels.items()}
    assert set(a.labels) == ns.members | dn.members


def test_mixed_mask_labels(mixed):
    ns, dn = discover_pair(mixed, DiscoveryConfig("mask", k=1, metric="sink"), 5)
    assert classify_gates(ns, dn).to_dict() == {
        "and": ["in0->g1.0", "in1->g1.0"],
        "or": ["in2->g1.1", "in3->g1.1"],
        "adder": ["g1.0->g2.0", "g1.1->g2.0", "g2.0->out"],
    }


def test_group_gates_by_receiver_and_label(mixed):
    g = mixed.graph
    e = g.edge_by_name
    lab = GateLabeling({e("in0->g1.0"): "AND", e("in1->g1.0"): "OR", e("g1.0->g2.0"): "ADDER",
                        e("g1.1->g2.0"): "ADDER"})
    gates = group_gates(lab, g)
    assert [(x.receiver.name, x.label, len(x)) for x in gates] == [
        ("g1.0", "AND", 1), ("g1.0", "OR", 1), ("g2.0", "ADDER", 2),
    ]


def test_same_receiver_pairs_are_ordered(mixed):
    e = mixed.graph.edge_by_name
    pairs = same_receiver_pairs([e("in0->g1.0"), e("in1->g1.0"), e("in2->g1.1")])
    assert [(a.name, b.name) for a, b in pairs] == [("in0->g1.0", "in1->g1.0"), ("in1->g1.0", "in0->g1.0")]


def planted_sets(planted9):
    ctx, kinds = planted9
    g = ctx.graph
    by = {k: [e for e in g.edges if kinds.get(e.receiver) == k] for k in ("AND", "OR", "ADDER")}
    return ctx, g, by


def test_pure_and_scores_zero(planted9):
    ctx, g, by = planted_sets(planted9)
    assert misalignment_and(ctx, g.circuit(by["AND"]), SAMPLER) == 0.0


def test_adder_pollution_raises_and_score(planted9):
    ctx, g, by = planted_sets(planted9)
    polluted = misalignment_and(ctx, g.circuit(by["AND"] + by["ADDER"]), SAMPLER)
    assert polluted == pytest.approx(0.2797059438853793)
    assert polluted > 0.0


def test_or_offset_is_m(planted9):
    ctx, g, by = planted_sets(planted9)
    c = g.circuit(by["OR"])
    base = misalignment_or(ctx, c, SAMPLER, m=0.0)
    assert misalignment_or(ctx, c, SAMPLER, m=1.5) - base == pytest.approx(1.5, abs=1e-12)


def test_single_edge_sets_rejected(mixed):
    c = mixed.graph.circuit(["in0->g1.0"])
    with pytest.raises(GateError, match="no pair"):
        misalignment_and(mixed, c)
    with pytest.raises(GateError, match="no pair"):
        misalignment_or(mixed, c)


def test_report_total_uses_m_without_or_pairs():
    r = MisalignmentReport(and_score=0.25, or_score=None, m=1.5)
    assert r.total == 1.75
    assert best_ratio([r, MisalignmentReport(0.0, 1.0)]).or_score == 1.0
    with pytest.raises(GateError):
        best_ratio([])


def test_report_fields(planted9):
    ctx, g, by = planted_sets(planted9)
    ns, dn = g.circuit(by["AND"] + by["ADDER"]), g.circuit(by["OR"] + by["ADDER"])
    r = misalignment_report(ctx, ns, dn, SAMPLER)
    assert (r.k_ns, r.k_dn, r.ratio) == (21, 21, 1.0)
    assert r.counts == {"AND": 6, "OR": 6, "ADDER": 15}
    assert r.and_score == 0.0


def test_ratio_sweep_bounds(mixed):
    n = len(mixed.graph.edges)
    with pytest.raises(GateError, match="edge counts"):
        ratio_sweep(mixed, DiscoveryConfig("linear", k=1, metric="sink"), 4, [n + 1])


def test_ratio_sweep_shapes(mixed):
    reps = ratio_sweep(mixed, DiscoveryConfig("linear", k=1, metric="sink"), 4, [3, 4, 5], SAMPLER)
    assert [(r.k_ns, r.k_dn) for r in reps] == [(4, 3), (4, 4), (4, 5)]
    assert reps[0].ratio == pytest.approx(4 / 3)
