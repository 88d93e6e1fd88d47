import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from envs import make_star, make_w2w, random_mdp
from features import onehot_features
from mdp import uniform_distribution

REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def w2w():
    return make_w2w()


@pytest.fixture
def star():
    return make_star()


@pytest.fixture
def repo_root(monkeypatch):
    monkeypatch.chdir(REPO_ROOT)
    return REPO_ROOT


@pytest.fixture(autouse=True)
def _isolated_settings(monkeypatch):
    for name in ("MBQ_SEED_BASE", "MBQ_LOG_LEVEL", "REDIS_URL", "MBQ_REDIS_URL"):
        monkeypatch.delenv(name, raising=False)


def small_mdp_suite(count, seed=0, gamma=0.05, num_states=5, num_actions=2):
    """Random stochastic MDPs with one-hot features and uniform mu."""
    generator = np.random.default_rng(seed)
    suite = []
    for _ in range(count):
        mdp = random_mdp(generator, num_states, num_actions, gamma)
        suite.append((mdp, onehot_features(num_states, num_actions), uniform_distribution(num_states, num_actions)))
    return suite
