import pytest

from gatecircuits.acceptance import network_context, reference_transformer, toy_context
from gatecircuits.models.spec import mixed_spec, planted_network


@pytest.fixture
def and_toy():
    return toy_context("AND")


@pytest.fixture
def or_toy():
    return toy_context("OR")


@pytest.fixture
def adder_toy():
    return toy_context("ADDER")


@pytest.fixture
def mixed():
    return network_context(mixed_spec())


@pytest.fixture
def planted9():
    """Three AND, three OR and three ADDER gates of two inputs each, summed on top."""
    pn = planted_network(["AND", "OR", "ADDER"] * 3, [2] * 9)
    return network_context(pn.spec), pn.kinds


@pytest.fixture(scope="session")
def transformer():
    return reference_transformer()
