import pytest
import torch
from hypothesis import given, settings, strategies as st

from gatecircuits.intervention import (
    AblationMode,
    InterventionError,
    PatchContext,
    _kl,
    circuit_accuracy,
    circuit_distance,
    corrupted_cache,
    normalize_metric,
    normalize_strategy,
    strategy_run,
)
from gatecircuits.models.tasks import make_task


def test_zero_ablation_on_adder_toy(adder_toy):
    g = adder_toy.graph
    for name in ("a0.0->m0", "a0.1->m0"):
        assert float(adder_toy.corrupt.edge_values[g.edge_by_name(name)]) == 0.0
    assert float(adder_toy.corrupt.output) == 0.0


def test_noise_with_zero_std_equals_zero_mode(adder_toy):
    m, d = adder_toy.model, adder_toy.dataset
    zero = corrupted_cache(m, d, AblationMode("zero"))
    noise = corrupted_cache(m, d, AblationMode("noise", 0.0, 0.0), seed=3)
    assert all(torch.equal(zero.edge_values[e], noise.edge_values[e]) for e in m.graph.edges)


def test_noise_is_reproducible(mixed):
    m, d = mixed.model, mixed.dataset
    a = corrupted_cache(m, d, AblationMode("noise", 0.0, 1.0), seed=5)
    b = corrupted_cache(m, d, AblationMode("noise", 0.0, 1.0), seed=5)
    c = corrupted_cache(m, d, AblationMode("noise", 0.0, 1.0), seed=6)
    e = m.graph.edge_order[0]
    assert torch.equal(a.edge_values[e], b.edge_values[e])
    assert not torch.equal(a.edge_values[e], c.edge_values[e])


def test_bad_ablation_modes():
    with pytest.raises(InterventionError):
        AblationMode("mean")
    with pytest.raises(InterventionError):
        AblationMode("noise", 0.0, -1.0)


def test_interchange_is_corrupted_forward(transformer):
    d = make_task("induction", {"n": 6}, seed=9)
    ctx = PatchContext(transformer, d)
    _, ref = transformer.forward(d.corrupted_inputs())
    assert torch.equal(ctx.corrupt.logits, ref.logits)


@pytest.mark.parametrize("strategy", ["Ns", "Dn", "NsDn"])
@pytest.mark.parametrize("metric", ["kl", "sink"])
def test_full_circuit_has_zero_distance(mixed, strategy, metric):
    assert circuit_distance(mixed, mixed.graph.full_circuit(), strategy, metric) == 0.0


def test_mixed_removals(mixed):
    g = mixed.graph
    full = g.full_circuit()
    assert circuit_distance(mixed, full.without([g.edge_by_name("in3->g1.1")]), "Ns", "sink") == 0.0
    assert circuit_distance(mixed, full.without([g.edge_by_name("in0->g1.0")]), "Ns", "sink") == 1.0


def test_nsdn_is_the_sum(mixed):
    g = mixed.graph
    c = g.circuit(["in0->g1.0", "g1.0->g2.0", "g2.0->out"])
    ns, dn, both = (strategy_run(mixed, c, s, "sink").distances for s in ("Ns", "Dn", "NsDn"))
    assert torch.equal(both, ns + dn)


def test_empty_circuit_is_worst_boundary(mixed):
    empty = mixed.graph.empty_circuit()
    for metric in ("kl", "sink"):
        assert circuit_distance(mixed, empty, "Ns", metric) >= 0.0
    assert circuit_distance(mixed, empty, "Ns", "sink") == 2.0


def test_accuracy_boundaries(transformer):
    d = make_task("induction", {"n": 32}, seed=11)
    ctx = PatchContext(transformer, d)
    g = transformer.graph
    labels = torch.tensor(d.clean_labels())
    full_acc = float((ctx.clean.logits.argmax(-1) == labels).double().mean())
    assert circuit_accuracy(ctx, g.full_circuit(), "Ns") == full_acc
    corrupted_acc = float((ctx.corrupt.logits.argmax(-1) == labels).double().mean())
    assert circuit_accuracy(ctx, g.empty_circuit(), "Ns") == pytest.approx(corrupted_acc)


def test_accuracy_needs_labels(mixed):
    with pytest.raises(InterventionError, match="label"):
        circuit_accuracy(mixed, mixed.graph.full_circuit(), "Ns")


def test_sink_metric_rejected_on_transformer(transformer):
    ctx = PatchContext(transformer, make_task("induction", {"n": 2}, seed=1))
    with pytest.raises(InterventionError):
        circuit_distance(ctx, transformer.graph.empty_circuit(), "Ns", "sink")


def test_names_normalize():
    assert normalize_strategy("nsdn") == "NsDn"
    assert normalize_metric("kl-divergence") == "kl"
    assert normalize_metric("sink-abs-diff") == "sink"
    with pytest.raises(InterventionError):
        normalize_strategy("both")
    with pytest.raises(InterventionError):
        normalize_metric("l2")


logits = st.lists(st.floats(-20, 20), min_size=3, max_size=3)


@settings(max_examples=100, deadline=None)
@given(logits, logits)
def test_kl_properties(p, q):
    p, q = torch.tensor([p], dtype=torch.float64), torch.tensor([q], dtype=torch.float64)
    assert float(_kl(p, p)) == pytest.approx(0.0, abs=1e-12)
    assert float(_kl(p, q)) >= 0.0
