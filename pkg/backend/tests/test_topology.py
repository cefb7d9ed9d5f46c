import dataclasses
import math

import numpy as np
import pytest

from services.topology import (ChannelParams, ComputeParams, Topology, channel_gain, communication_cost,
                               computation_cost, generate_topology, grid_extent, grid_positions, total_cost,
                               uplink_rate)
from utils.errors import ConfigError, InfeasibleLinkError


def channel(bandwidth, snr):
    return ChannelParams(bandwidth=bandwidth, tx_power=snr, channel_gain=1.0, noise_psd=1.0)


def test_grid_of_nine_servers():
    assert sorted(grid_positions(9, 100.0)) == sorted((float(x), float(y)) for x in (0, 100, 200) for y in (0, 100, 200))


def test_grid_extent_follows_the_side_length(small_config):
    assert grid_extent(1, 50.0) == 0.0
    assert grid_extent(9, 100.0) == 200.0
    assert grid_extent(10, 100.0) == 300.0
    config = small_config.replace(n_servers=10, winners_per_round=2)
    topo = generate_topology(config, np.random.default_rng(1))
    assert max(max(c.position) for c in topo.clients) <= grid_extent(10, config.grid_spacing)
    assert max(max(s.position) for s in topo.servers) == grid_extent(10, config.grid_spacing)


def test_single_server_sits_at_origin(small_config):
    config = small_config.replace(n_servers=1, capacity=12, winners_per_round=1)
    topo = generate_topology(config, np.random.default_rng(0))
    assert topo.servers[0].position == (0.0, 0.0)
    assert all(c.position == (0.0, 0.0) for c in topo.clients)


def test_clients_inside_bounding_box(small_config):
    config = small_config.replace(n_clients=50, n_servers=9, capacity=10, n_samples=2000)
    topo = generate_topology(config, np.random.default_rng(7))
    assert len(topo.clients) == 50
    for c in topo.clients:
        assert 0.0 <= c.position[0] <= 200.0 and 0.0 <= c.position[1] <= 200.0
        assert c.data_size >= 1
        assert config.theta_low <= c.cost_factor <= config.theta_high


def test_generation_is_deterministic(small_config):
    a = generate_topology(small_config, np.random.default_rng(3))
    b = generate_topology(small_config, np.random.default_rng(3))
    assert a.to_json() == b.to_json()


def test_json_round_trip(small_config):
    topo = generate_topology(small_config, np.random.default_rng(1))
    assert Topology.from_dict(topo.to_dict()) == topo


def test_explicit_data_sizes_are_used(small_config):
    sizes = list(range(1, 13))
    topo = generate_topology(small_config, np.random.default_rng(0), data_sizes=sizes)
    assert [c.data_size for c in topo.clients] == sizes


def test_rejects_zero_servers(small_config):
    with pytest.raises(ConfigError) as err:
        generate_topology(dataclasses.replace(small_config, n_servers=0), np.random.default_rng(0))
    assert err.value.key == "n_servers"


@pytest.mark.parametrize("bandwidth,snr,expected", [(1.0, 1.0, 1.0), (2.0, 3.0, 4.0), (1e6, 0.0, 0.0)])
def test_uplink_rate(bandwidth, snr, expected):
    assert uplink_rate(channel(bandwidth, snr)) == pytest.approx(expected)


def test_uplink_rate_monotone():
    assert uplink_rate(channel(2.0, 1.0)) > uplink_rate(channel(1.0, 1.0))
    assert uplink_rate(channel(1.0, 2.0)) > uplink_rate(channel(1.0, 1.0))


def test_computation_cost():
    assert computation_cost(ComputeParams(kappa=2, cycles=3, clock=2)) == 24
    assert computation_cost(ComputeParams(kappa=0, cycles=3, clock=2)) == 0
    rng = np.random.default_rng(0)
    for _ in range(20):
        k, a, f = rng.uniform(0.1, 10, size=3)
        assert computation_cost(ComputeParams(k, a, f)) == pytest.approx(k * a * f ** 2)


def test_communication_cost():
    assert communication_cost(10, 1) == 10
    assert communication_cost(0, 5) == 0
    with pytest.raises(InfeasibleLinkError):
        communication_cost(10, 0)
    for x, r in [(1e6, 3.7e5), (17.0, 3.0)]:
        assert communication_cost(x, r) * r == pytest.approx(x, rel=1e-15)


def test_channel_gain_clamps_inside_reference():
    assert channel_gain(0.2) == 1.0
    assert channel_gain(10.0) == pytest.approx(0.01)


def test_total_cost_composes_components(small_config):
    topo = generate_topology(small_config, np.random.default_rng(5))
    client = topo.clients[0]
    dist = math.dist(client.position, topo.servers[1].position)
    gain = channel_gain(dist, topo.path_loss_ref, topo.path_loss_exponent)
    rate = uplink_rate(ChannelParams(topo.bandwidth, topo.tx_power, gain, topo.noise_psd))
    expected = computation_cost(client.compute) + client.cost_factor * communication_cost(topo.model_size, rate)
    assert total_cost(client, 1, topo) == pytest.approx(expected)


def test_total_cost_nondecreasing_in_distance(small_config):
    topo = generate_topology(small_config, np.random.default_rng(2))
    client = topo.clients[0]
    ordered = sorted(range(len(topo.servers)), key=lambda s: math.dist(client.position, topo.servers[s].position))
    costs = [total_cost(client, s, topo) for s in ordered]
    assert all(a <= b + 1e-15 for a, b in zip(costs, costs[1:]))
