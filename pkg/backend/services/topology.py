"""Simulated HFL network: grid-placed edge servers, randomly placed clients and
the per-(client, server) computation and communication cost model."""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from utils.config import SimConfig
from utils.errors import ConfigError, InfeasibleLinkError


@dataclass(frozen=True)
class ComputeParams:
    kappa: float
    cycles: float
    clock: float

    def __post_init__(self):
        if self.kappa < 0 or self.cycles <= 0 or self.clock <= 0:
            raise ValueError(f"compute parameters must be positive: {self}")


@dataclass(frozen=True)
class ChannelParams:
    bandwidth: float
    tx_power: float
    channel_gain: float
    noise_psd: float

    def __post_init__(self):
        if self.bandwidth <= 0 or self.noise_psd <= 0:
            raise ValueError("bandwidth and noise_psd must be > 0")
        if self.tx_power < 0 or self.channel_gain < 0:
            raise ValueError("tx_power and channel_gain must be >= 0")


@dataclass(frozen=True)
class ClientNode:
    id: int
    position: tuple[float, float]
    data_size: int
    cost_factor: float
    compute: ComputeParams


@dataclass(frozen=True)
class EdgeServer:
    id: int
    position: tuple[float, float]


@dataclass(frozen=True)
class Topology:
    clients: tuple[ClientNode, ...]
    servers: tuple[EdgeServer, ...]
    model_size: float
    grid_spacing: float
    bandwidth: float
    tx_power: float
    noise_psd: float
    path_loss_ref: float
    path_loss_exponent: float

    def client(self, client_id: int) -> ClientNode:
        return self.clients[client_id]

    def server(self, server_id: int) -> EdgeServer:
        return self.servers[server_id]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        clients = tuple(
            ClientNode(id=c["id"], position=tuple(c["position"]), data_size=c["data_size"],
                       cost_factor=c["cost_factor"], compute=ComputeParams(**c["compute"]))
            for c in data["clients"]
        )
        servers = tuple(EdgeServer(id=s["id"], position=tuple(s["position"])) for s in data["servers"])
        rest = {k: v for k, v in data.items() if k not in ("clients", "servers")}
        return cls(clients=clients, servers=servers, **rest)


def grid_side(n_servers: int) -> int:
    return math.ceil(math.sqrt(n_servers))


def grid_extent(n_servers: int, spacing: float) -> float:
    """Side length of the grid's bounding box, which starts at the origin."""
    return (grid_side(n_servers) - 1) * spacing


def grid_positions(n_servers: int, spacing: float) -> list[tuple[float, float]]:
    side = grid_side(n_servers)
    return [(float((j % side) * spacing), float((j // side) * spacing)) for j in range(n_servers)]


def _sample_data_sizes(n_clients: int, total: int, beta: float, rng: np.random.Generator) -> np.ndarray:
    counts = rng.multinomial(total - n_clients, rng.dirichlet([beta] * n_clients))
    return counts + 1


def generate_topology(config: SimConfig, rng: np.random.Generator,
                      data_sizes: list[int] | None = None) -> Topology:
    """Place K servers on the grid and N clients uniformly inside its bounding box.

    data_sizes comes from the learner's Dirichlet split when the simulator runs;
    standalone callers get Dirichlet-induced counts over config.n_samples.
    """
    if config.n_servers < 1:
        raise ConfigError("n_servers", "must be >= 1")
    if config.n_clients < 1:
        raise ConfigError("n_clients", "must be >= 1")
    if config.grid_spacing <= 0:
        raise ConfigError("grid_spacing", "must be > 0")

    n = config.n_clients
    servers = tuple(EdgeServer(id=j, position=pos)
                    for j, pos in enumerate(grid_positions(config.n_servers, config.grid_spacing)))
    extent = grid_extent(config.n_servers, config.grid_spacing)

    positions = rng.uniform(0.0, extent, size=(n, 2)) if extent > 0 else np.zeros((n, 2))
    if data_sizes is None:
        sizes = _sample_data_sizes(n, config.n_samples, config.dirichlet_beta, rng)
    else:
        if len(data_sizes) != n:
            raise ConfigError("n_clients", f"got {len(data_sizes)} data sizes for {n} clients")
        sizes = np.asarray(data_sizes)
    thetas = rng.uniform(config.theta_low, config.theta_high, size=n)
    jitter = rng.uniform(-config.compute_jitter, config.compute_jitter, size=n)

    clients = []
    for i in range(n):
        size = int(sizes[i])
        if size < 1:
            raise ConfigError("n_samples", f"client {i} holds no data")
        compute = ComputeParams(kappa=config.kappa,
                                cycles=config.cycles_per_sample * size,
                                clock=config.clock_hz * (1.0 + float(jitter[i])))
        clients.append(ClientNode(id=i, position=(float(positions[i, 0]), float(positions[i, 1])),
                                  data_size=size, cost_factor=float(thetas[i]), compute=compute))

    return Topology(clients=tuple(clients), servers=servers, model_size=config.model_size_bits,
                    grid_spacing=config.grid_spacing, bandwidth=config.bandwidth_hz,
                    tx_power=config.tx_power_w, noise_psd=config.noise_psd,
                    path_loss_ref=config.path_loss_ref_km,
                    path_loss_exponent=config.path_loss_exponent)


def distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def channel_gain(dist: float, ref: float = 1.0, exponent: float = 2.0) -> float:
    """Inverse power-law path loss; distances inside the reference distance get gain 1."""
    return (ref / max(dist, ref)) ** exponent


def channel_between(client: ClientNode, server_id: int, topo: Topology) -> ChannelParams:
    dist = distance(client.position, topo.server(server_id).position)
    return ChannelParams(bandwidth=topo.bandwidth, tx_power=topo.tx_power,
                         channel_gain=channel_gain(dist, topo.path_loss_ref, topo.path_loss_exponent),
                         noise_psd=topo.noise_psd)


def uplink_rate(ch: ChannelParams) -> float:
    return ch.bandwidth * math.log2(1.0 + ch.tx_power * ch.channel_gain / ch.noise_psd)


def computation_cost(p: ComputeParams) -> float:
    return p.kappa * p.cycles * p.clock ** 2


def communication_cost(model_size: float, rate: float) -> float:
    if model_size < 0:
        raise ValueError("model_size must be >= 0")
    if rate <= 0:
        raise InfeasibleLinkError(f"uplink rate {rate} leaves the link infeasible")
    return model_size / rate


def client_costs(client: ClientNode, server_id: int, topo: Topology) -> tuple[float, float]:
    """(computation cost, communication cost) of the client training under server_id."""
    rate = uplink_rate(channel_between(client, server_id, topo))
    return computation_cost(client.compute), communication_cost(topo.model_size, rate)


def total_cost(client: ClientNode, server: int, topo: Topology) -> float:
    c_cp, c_cm = client_costs(client, server, topo)
    return c_cp + client.cost_factor * c_cm
