import itertools

import numpy as np
import pytest

from borrownet.network import Network, NetworkConfig, build_hierarchy


@pytest.fixture(scope="session")
def small_config():
    return NetworkConfig(3, 6, 12, 24, q1=1.0, q2=0.5, q3=0.3, q4=0.1, seed=7)


@pytest.fixture(scope="session")
def small_network(small_config):
    return build_hierarchy(small_config)


@pytest.fixture(scope="session")
def midsize_network():
    # same tier shape as the default setup, six branches
    cfg = NetworkConfig(6, 60, 420, 2520, q1=1.0, q2=0.7, q3=0.05, target_degree=100, seed=11)
    return build_hierarchy(cfg)


@pytest.fixture()
def path3():
    return Network.from_edges(3, np.array([[0, 1], [1, 2]]))


@pytest.fixture()
def clique6():
    edges = np.array(list(itertools.combinations(range(6), 2)))
    return Network.from_edges(6, edges)
