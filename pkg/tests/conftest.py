import pytest
from hypothesis import HealthCheck, settings

from netdiag.embedding import Vocabulary, init_matrices
from netdiag.simulator import default_catalog, separable_catalog
from netdiag.topology import TopologySpec, generate_man_topology

settings.register_profile(
    "suite",
    max_examples=50,
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def small_topology():
    return generate_man_topology(TopologySpec(n_core=3, n_agg=4, n_bs=8, cross_link_prob=0.2, seed=3))


@pytest.fixture(scope="session")
def std_topology():
    return generate_man_topology(TopologySpec(n_core=6, n_agg=6, n_bs=12, cross_link_prob=0.15, seed=7))


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def sep_catalog():
    return separable_catalog()


@pytest.fixture(scope="session")
def tiny_vocab():
    return Vocabulary(tokens=("<unk>", "alarm", "clock", "power", "sync", "fan"))


@pytest.fixture(scope="session")
def tiny_embedding(tiny_vocab):
    return init_matrices(tiny_vocab.size, 6, seed=5)
