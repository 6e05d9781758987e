import numpy as np
import pytest

from tlsbpg.env.topology import build_graph, read_config


@pytest.fixture(scope="session")
def default_cfg():
    cfg, _ = read_config("bgs_default")
    return cfg


@pytest.fixture(scope="session")
def default_graph(default_cfg):
    return build_graph(default_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
