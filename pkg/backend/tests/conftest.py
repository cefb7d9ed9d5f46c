import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from services.hedonic import HedonicInstance  # noqa: E402
from services.preference import PreferenceProfile  # noqa: E402
from utils.config import config_from_mapping  # noqa: E402

SMALL = {
    "n_clients": 12,
    "n_servers": 4,
    "winners_per_round": 2,
    "capacity": 4,
    "rounds": 3,
    "n_samples": 1200,
    "n_features": 8,
    "n_classes": 4,
    "budget": 10.0,
    "local_epochs": 1,
}


@pytest.fixture
def small_config():
    return config_from_mapping(SMALL)


def random_profile(owner: int, servers, rng: np.random.Generator, weak: bool = True) -> PreferenceProfile:
    """Shuffle the servers and, for weak profiles, cut the order into random indifference classes."""
    order = [servers[k] for k in rng.permutation(len(servers))]
    if not weak:
        return PreferenceProfile.strict(owner, order)
    classes, current = [], [order[0]]
    for s in order[1:]:
        if rng.random() < 0.4:
            current.append(s)
        else:
            classes.append(current)
            current = [s]
    classes.append(current)
    return PreferenceProfile.from_lists(owner, classes)


def random_instance(rng: np.random.Generator, max_clients: int = 6, max_servers: int = 3) -> HedonicInstance:
    n_servers = int(rng.integers(1, max_servers + 1))
    capacity = int(rng.integers(2, 4))
    n_clients = int(rng.integers(1, min(max_clients, capacity * n_servers) + 1))
    servers = tuple(range(n_servers))
    clients = tuple(range(n_clients))
    weak = bool(rng.random() < 0.5)
    profiles = {i: random_profile(i, servers, rng, weak) for i in clients}
    data_sizes = {i: int(rng.integers(1, 100)) for i in clients}
    return HedonicInstance(clients=clients, servers=servers, profiles=profiles, capacity=capacity,
                           data_sizes=data_sizes)


@pytest.fixture
def instance_factory():
    return random_instance
