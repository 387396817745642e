import random

import pytest
from hypothesis import given, settings, strategies as st

from gatecircuits.graph import (
    Circuit,
    ComputationalGraph,
    EdgeId,
    GraphError,
    NodeId,
    circuit_complement,
    circuit_difference,
    circuit_intersection,
    circuit_union,
    hamming_distance,
    random_subcircuit,
)
from gatecircuits.models.spec import ModelSpec, build_graph, mixed_spec

IN = NodeId("input")
A1, A2 = NodeId("attention-head", 0, 0), NodeId("attention-head", 0, 1)
M = NodeId("mlp", 0)
OUT = NodeId("output", 1)


def toy_graph():
    return build_graph(ModelSpec("toy-transformer"))


def chain(n: int) -> ComputationalGraph:
    """in -> g1.0 -> ... -> out with extra skip edges from the input."""
    mids = [NodeId("gate-node", i + 1, 0) for i in range(n)]
    nodes = [IN, *mids, NodeId("output", n + 1)]
    edges = [EdgeId(a, b) for a, b in zip(nodes, nodes[1:])]
    edges += [EdgeId(IN, m) for m in mids[1:]]
    return ComputationalGraph(nodes, edges)


def test_toy_graph_shape():
    g = toy_graph()
    assert sorted(n.name for n in g.nodes) == ["a0.0", "a0.1", "in0", "m0", "out"]
    assert [e.name for e in g.edge_order] == ["in0->a0.0", "in0->a0.1", "a0.0->m0", "a0.1->m0", "m0->out"]


def test_mixed_graph_has_source_gate_and_output_edges():
    g = build_graph(mixed_spec())
    names = {e.name for e in g.edges}
    assert {"in0->g1.0", "in1->g1.0", "in2->g1.1", "in3->g1.1", "g1.0->g2.0", "g1.1->g2.0", "g2.0->out"} == names


def test_topological_order_respects_edges():
    g = build_graph(mixed_spec())
    pos = {n: i for i, n in enumerate(g.topo)}
    assert all(pos[e.sender] < pos[e.receiver] for e in g.edges)


def test_no_output_node_rejected():
    with pytest.raises(GraphError, match="no output node"):
        ComputationalGraph([IN], [])


def test_empty_gate_network_rejected():
    with pytest.raises(GraphError, match="no output node"):
        build_graph(ModelSpec("gate-network"))


def test_cycle_rejected():
    b = NodeId("gate-node", 1, 0)
    c = NodeId("gate-node", 2, 0)
    with pytest.raises(GraphError, match="cycle"):
        ComputationalGraph([IN, b, c, OUT], [EdgeId(IN, b), EdgeId(b, c), EdgeId(c, b), EdgeId(c, OUT)])


def test_unreachable_and_dead_nodes_rejected():
    b = NodeId("gate-node", 1, 0)
    with pytest.raises(GraphError, match="unreachable"):
        ComputationalGraph([IN, b, OUT], [EdgeId(IN, OUT), EdgeId(b, OUT)])
    dead = NodeId("gate-node", 1, 1)
    sink = NodeId("gate-node", 2, 0)
    with pytest.raises(GraphError, match="dead"):
        ComputationalGraph([IN, dead, sink, OUT], [EdgeId(IN, OUT), EdgeId(IN, dead), EdgeId(dead, sink)])


def test_self_edge_rejected():
    with pytest.raises(GraphError, match="self-edge"):
        ComputationalGraph([IN, OUT], [EdgeId(IN, OUT), EdgeId(OUT, OUT)])


def test_node_names():
    assert NodeId("attention-head", 5, 9).name == "a5.9"
    assert NodeId("mlp", 8).name == "m8"
    with pytest.raises(GraphError):
        NodeId("bogus")


def test_build_graph_is_pure():
    assert build_graph(mixed_spec()) == build_graph(mixed_spec())
    assert build_graph(mixed_spec()).graph_id == build_graph(mixed_spec()).graph_id


def test_set_algebra_examples():
    g = toy_graph()
    e1, e2, e3, e4 = g.edge_order[:4]
    a, b = g.circuit([e1, e2, e3]), g.circuit([e2, e3, e4])
    assert circuit_difference(a, b) == g.circuit([e1])
    assert circuit_intersection(a, b) == g.circuit([e2, e3])
    assert circuit_union(a, b) == g.circuit([e1, e2, e3, e4])
    assert len(circuit_difference(a, a)) == 0
    assert len(circuit_complement(g, g.full_circuit())) == 0


def test_hamming_examples():
    g = toy_graph()
    e1, e2, e3 = g.edge_order[:3]
    assert hamming_distance(g.circuit([e1, e2]), g.circuit([e1, e2])) == 0
    assert hamming_distance(g.circuit([e1, e2]), g.circuit([e2, e3])) == 2
    assert hamming_distance(g.circuit([e1]), g.empty_circuit()) == 1


def test_mismatched_graphs_rejected():
    a = toy_graph().full_circuit()
    b = build_graph(mixed_spec()).full_circuit()
    for op in (circuit_difference, circuit_intersection, circuit_union, hamming_distance):
        with pytest.raises(GraphError):
            op(a, b)


def test_circuit_rejects_foreign_edges():
    g = toy_graph()
    with pytest.raises(GraphError):
        Circuit(g, [EdgeId(IN, OUT)])


def test_circuit_names_canonical_and_by_name():
    g = toy_graph()
    c = g.circuit(["m0->out", "a0.1->m0"])
    assert c.names() == ["a0.1->m0", "m0->out"]
    assert c.sparsity_ratio == pytest.approx(0.4)


def test_random_subcircuit_contract():
    g = chain(10)
    c = g.full_circuit()
    assert len(c) == 20
    first = random_subcircuit(c, (2, 5), 7)
    assert 2 <= len(first) <= 5
    assert random_subcircuit(c, (2, 5), 7) == first
    assert len(random_subcircuit(c, (0, 0), 1)) == 0
    small = g.circuit(list(g.edge_order)[:10])
    with pytest.raises(GraphError):
        random_subcircuit(small, (11, 12), 0)


circuit_bits = st.lists(st.booleans(), min_size=20, max_size=20)


@settings(max_examples=60, deadline=None)
@given(circuit_bits, circuit_bits, circuit_bits)
def test_partition_and_hamming_identities(x, y, z):
    g = chain(10)
    pick = lambda bits: g.circuit(e for e, b in zip(g.edge_order, bits) if b)  # noqa: E731
    a, b, c = pick(x), pick(y), pick(z)
    parts = [circuit_difference(a, b), circuit_intersection(a, b), circuit_difference(b, a)]
    assert sum(len(p) for p in parts) == len(circuit_union(a, b))
    assert frozenset().union(*(p.members for p in parts)) == circuit_union(a, b).members
    assert hamming_distance(a, b) == len(a) + len(b) - 2 * len(circuit_intersection(a, b))
    assert hamming_distance(a, b) == hamming_distance(b, a)
    assert hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c)
    assert (hamming_distance(a, b) == 0) == (a == b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 20), st.integers(0, 20))
def test_random_subcircuit_sizes(seed, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    c = chain(10).full_circuit()
    sub = random_subcircuit(c, (lo, hi), random.Random(seed))
    assert lo <= len(sub) <= hi
    assert sub.members <= c.members
