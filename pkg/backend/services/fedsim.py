"""Round loop of the simulator: preference generation, POP partitioning, equilibrium
bidding, winner selection, hierarchical training and payoff distribution, plus
the four baseline selection methods."""

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from services.auction import (AuctionOutcome, Bid, CostDistribution, ScoringWeights, coalition_cost_model,
                              coalition_theta, equilibrium_bid, select_winners_greedy, select_winners_random,
                              select_winners_sampled)
from services.hedonic import Partition, pop
from services.learner import (GlobalModel, LearnerDataset, SoftmaxRegression, dirichlet_partition,
                              hierarchical_aggregate, local_train, synthetic_task)
from services.preference import (ClientHistory, CoalitionSnapshot, PayoffEstimator, build_preference_profile,
                                 update_payoff_estimate)
from services.topology import Topology, generate_topology, total_cost
from utils.config import SimConfig
from utils.errors import InfeasibleLinkError
from utils.logger import get_logger

logger = get_logger(__name__)

HEDONIC_METHODS = ("dualgfl", "dualgflstat", "fedavghed")
METRICS = ("total_score", "avg_client_quality", "avg_coalition_quality", "avg_client_payoff",
           "avg_client_utility")
COLUMNS = ("round", "method", *METRICS, *(f"cum_{m}" for m in METRICS), "test_accuracy",
           "n_winning_clients")

_STREAMS = ("data", "topology", "partition", "selection", "training")


@dataclass
class SimulationState:
    config: SimConfig
    topology: Topology
    dataset: LearnerDataset
    learner: SoftmaxRegression
    model: GlobalModel
    estimator: PayoffEstimator
    weights: ScoringWeights
    cost_distribution: CostDistribution
    rngs: dict[str, np.random.Generator]
    cohort_size: int
    histories: dict[int, ClientHistory] = field(default_factory=dict)
    partition: Partition | None = None
    singleton_bids: dict[int, tuple[Bid, int]] = field(default_factory=dict)
    round_index: int = 0

    @property
    def clients(self) -> list[int]:
        return [c.id for c in self.topology.clients]

    @property
    def servers(self) -> list[int]:
        return [s.id for s in self.topology.servers]

    @property
    def data_sizes(self) -> dict[int, int]:
        return {c.id: c.data_size for c in self.topology.clients}


@dataclass(frozen=True)
class RoundRecord:
    round: int
    method: str
    partition: Partition | None
    winners: tuple[int, ...]
    winning_bids: tuple[Bid, ...]
    total_score: float
    spent_resource: float
    avg_client_quality: float
    avg_coalition_quality: float
    payoffs: Mapping[int, float]
    utilities: Mapping[int, float]
    avg_client_payoff: float
    avg_client_utility: float
    test_accuracy: float
    training_loss: float
    n_winning_clients: int
    aggregation_gap: float

    def to_row(self) -> dict:
        return {
            "round": self.round,
            "method": self.method,
            "total_score": self.total_score,
            "avg_client_quality": self.avg_client_quality,
            "avg_coalition_quality": self.avg_coalition_quality,
            "avg_client_payoff": self.avg_client_payoff,
            "avg_client_utility": self.avg_client_utility,
            "test_accuracy": self.test_accuracy,
            "n_winning_clients": self.n_winning_clients,
        }


@dataclass
class MetricsLog:
    method: str
    seed: int
    records: list[RoundRecord] = field(default_factory=list)

    def cumulative(self) -> list[dict[str, float]]:
        """Running means of each per-round metric."""
        out, sums = [], {m: 0.0 for m in METRICS}
        for t, record in enumerate(self.records, start=1):
            for m in METRICS:
                sums[m] += getattr(record, m)
            out.append({f"cum_{m}": sums[m] / t for m in METRICS})
        return out

    def rows(self) -> list[dict]:
        return [{**r.to_row(), **cum} for r, cum in zip(self.records, self.cumulative())]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows(), columns=list(COLUMNS))

    def final(self) -> dict[str, float]:
        last = self.rows()[-1]
        return {**{k: v for k, v in last.items() if k.startswith("cum_")}, "test_accuracy": last["test_accuracy"]}

    def mean_winning_clients(self) -> float:
        return float(np.mean([r.n_winning_clients for r in self.records])) if self.records else 0.0


def default_cohort_size(config: SimConfig) -> int:
    return max(1, round(config.winners_per_round * config.n_clients / config.n_servers))


def payoff_prior(config: SimConfig, total_data: float) -> float:
    """Starting R_hat: the expected payoff if M of K coalitions of average quality win."""
    if config.payoff_prior is not None:
        return config.payoff_prior
    mean_quality = total_data / config.n_servers
    return config.winners_per_round / config.n_servers * config.quality_weights[0] * mean_quality


def init_state(config: SimConfig) -> SimulationState:
    streams = dict(zip(_STREAMS, (np.random.default_rng(s)
                                  for s in np.random.SeedSequence(config.seed).spawn(len(_STREAMS)))))
    task = synthetic_task(config, random_state=int(streams["data"].integers(2**31 - 1)))
    dataset = dirichlet_partition(task, config.n_clients, config.dirichlet_beta, streams["data"])
    topo = generate_topology(config, streams["topology"], data_sizes=dataset.sizes)
    learner = SoftmaxRegression(config.n_features, config.n_classes)
    prior = payoff_prior(config, float(dataset.total_samples))
    return SimulationState(
        config=config, topology=topo, dataset=dataset, learner=learner,
        model=GlobalModel(learner.init_params()),
        estimator=PayoffEstimator(ema_coefficient=config.ema_coefficient, prior=prior),
        weights=ScoringWeights(tuple(config.quality_weights)),
        cost_distribution=CostDistribution(config.coalition_theta_low, config.coalition_theta_high,
                                           config.cost_distribution),
        rngs=streams, cohort_size=config.cohort_size or default_cohort_size(config),
        histories={i: ClientHistory() for i in range(config.n_clients)},
    )


def distribute_payoffs(contract_price: float, members: Mapping[int, float]) -> dict[int, float]:
    """Split the price by data share; the float residual goes to the largest share."""
    if not members:
        raise ValueError("cannot distribute a payoff over an empty coalition")
    total = math.fsum(members.values())
    payoffs = {i: d / total * contract_price for i, d in sorted(members.items())}
    residual = contract_price - math.fsum(payoffs.values())
    if residual:
        largest = max(payoffs, key=lambda i: (payoffs[i], -i))
        payoffs[largest] += residual
    return payoffs


def snapshots(state: SimulationState) -> list[CoalitionSnapshot]:
    members = state.partition.coalitions if state.partition is not None else {}
    sizes = state.data_sizes
    return [CoalitionSnapshot(server=s, members=frozenset(members.get(s, ())),
                              data=float(sum(sizes[i] for i in members.get(s, ()))))
            for s in state.servers]


def coalition_resource(config: SimConfig, size: int) -> float:
    """Bandwidth E_k a coalition requests: its edge backhaul plus each member's uplink."""
    return config.edge_bandwidth + config.bandwidth_per_client * size


def coalition_bids(state: SimulationState, partition: Partition) -> dict[int, Bid]:
    config = state.config
    nonempty = {s: m for s, m in partition.coalitions.items() if m}
    n_bidders = max(2, len(nonempty))
    bids = {}
    for server, members in sorted(nonempty.items()):
        model = coalition_cost_model(sorted(members), server, state.topology, config.bid_mode,
                                     config.quality_cost_curvature)
        theta = coalition_theta(sorted(members), state.topology, state.cost_distribution)
        bids[server] = equilibrium_bid(server, model, theta, state.cost_distribution, n_bidders,
                                       state.weights, coalition_resource(config, len(members)))
    return bids


def _cheapest_server(client: int, state: SimulationState) -> int:
    node = state.topology.client(client)
    costs = {}
    for s in state.servers:
        try:
            costs[s] = total_cost(node, s, state.topology)
        except InfeasibleLinkError:
            continue
    if not costs:
        raise InfeasibleLinkError(f"client {client} reaches no edge server")
    return min(costs, key=lambda s: (costs[s], s))


def singleton_bids(state: SimulationState) -> dict[int, tuple[Bid, int]]:
    """Each client's own equilibrium bid at its cheapest server, competing against every client.

    Client bids do not depend on the round, so they are computed once per run.
    """
    if not state.singleton_bids:
        config = state.config
        n_bidders = max(2, config.n_clients)
        for i in state.clients:
            server = _cheapest_server(i, state)
            model = coalition_cost_model([i], server, state.topology, config.bid_mode,
                                         config.quality_cost_curvature)
            theta = coalition_theta([i], state.topology, state.cost_distribution)
            bid = equilibrium_bid(i, model, theta, state.cost_distribution, n_bidders, state.weights,
                                  config.bandwidth_per_client)
            state.singleton_bids[i] = (bid, server)
    return state.singleton_bids


def _select(state: SimulationState, method: str, bids: list[Bid]) -> AuctionOutcome:
    config = state.config
    rng = state.rngs["selection"]
    if method == "dualgfl":
        return select_winners_greedy(bids, state.weights, config.winners_per_round, config.budget)
    if method == "dualgflstat":
        return select_winners_sampled(bids, state.weights, config.winners_per_round, config.budget, rng)
    if method == "fedavghed":
        return select_winners_random(bids, state.weights, config.winners_per_round, config.budget, rng)
    if method == "fedavgauc":
        return select_winners_greedy(bids, state.weights, state.cohort_size, math.inf)
    raise ValueError(f"unknown method {method!r}")


def _train(state: SimulationState, groups: Mapping[int, list[int]]) -> float:
    """Local training of every grouped client, edge then central aggregation; returns the gap."""
    config = state.config
    rng = state.rngs["training"]
    updates = {}
    for server in sorted(groups):
        updates[server] = []
        for i in sorted(groups[server]):
            y = local_train(state.learner, state.model.parameters, state.dataset.client_features[i],
                            state.dataset.client_labels[i], config.local_epochs, config.learning_rate,
                            config.batch_size, rng)
            if y is None:
                logger.warning("client %d holds no data and skips round %d", i, state.round_index)
                continue
            updates[server].append((y, float(len(state.dataset.client_labels[i]))))
    params, gap = hierarchical_aggregate(updates)
    if params is None:
        logger.warning("round %d has no participants; the global model is unchanged", state.round_index)
        return 0.0
    state.model = GlobalModel(params)
    return gap


def _evaluate(state: SimulationState) -> tuple[float, float]:
    data = state.dataset
    accuracy = state.learner.accuracy(state.model.parameters, data.test_features, data.test_labels)
    loss = state.learner.loss(state.model.parameters, np.vstack(data.client_features),
                              np.concatenate(data.client_labels))
    return accuracy, loss


def _hedonic_round(state: SimulationState, method: str):
    profiles = {i: build_preference_profile(i, snapshots(state), state.estimator, state.histories[i],
                                            state.topology)
                for i in state.clients}
    partition = pop(state.clients, state.servers, profiles, state.config.capacity, state.rngs["partition"],
                    state.data_sizes)
    partition.validate(state.clients, state.config.capacity)
    bids = coalition_bids(state, partition)
    outcome = _select(state, method, list(bids.values()))

    groups = {k: sorted(partition.coalitions[k]) for k in outcome.winners}
    payoffs, utilities = {}, {}
    for bid in outcome.winning_bids:
        members = {i: float(state.data_sizes[i]) for i in groups[bid.coalition]}
        shares = distribute_payoffs(bid.price, members)
        for i, share in shares.items():
            payoffs[i] = share
            utilities[i] = share - total_cost(state.topology.client(i), bid.coalition, state.topology)

    estimator = state.estimator
    for bid in outcome.winning_bids:
        estimator = update_payoff_estimate(estimator, bid.coalition, bid.price, selected=True)
    state.estimator = estimator
    state.histories = {i: ClientHistory(joined={partition.server_of(i)}) for i in state.clients}
    state.partition = partition
    return partition, outcome, groups, payoffs, utilities


def _client_round(state: SimulationState, method: str):
    bids = singleton_bids(state)
    config = state.config
    if method == "fedavgauc":
        outcome = _select(state, method, [bid for bid, _ in bids.values()])
    else:
        picked = state.rngs["selection"].choice(config.n_clients, size=min(state.cohort_size, config.n_clients),
                                                replace=False)
        chosen = [bids[int(i)][0] for i in sorted(picked)]
        # fedavg pays each sampled client its bid price but scores nothing
        outcome = AuctionOutcome(winners=tuple(b.coalition for b in chosen), winning_bids=tuple(chosen),
                                 assigned_scores=tuple(0.0 for _ in chosen), total_score=0.0,
                                 spent_resource=math.fsum(b.resource for b in chosen), shortfall=0)
    groups = {i: [i] for i in outcome.winners}
    payoffs, utilities = {}, {}
    for bid in outcome.winning_bids:
        server = bids[bid.coalition][1]
        payoffs[bid.coalition] = bid.price
        utilities[bid.coalition] = bid.price - total_cost(state.topology.client(bid.coalition), server,
                                                          state.topology)
    return None, outcome, groups, payoffs, utilities


def run_round(state: SimulationState, method: str | None = None) -> RoundRecord:
    method = method or state.config.method
    if method in HEDONIC_METHODS:
        partition, outcome, groups, payoffs, utilities = _hedonic_round(state, method)
    else:
        partition, outcome, groups, payoffs, utilities = _client_round(state, method)

    gap = _train(state, groups)
    accuracy, loss = _evaluate(state)
    sizes = state.data_sizes
    winning_clients = sorted(i for members in groups.values() for i in members)
    n = state.config.n_clients
    record = RoundRecord(
        round=state.round_index, method=method, partition=partition, winners=outcome.winners,
        winning_bids=outcome.winning_bids, total_score=outcome.total_score,
        spent_resource=outcome.spent_resource,
        avg_client_quality=float(np.mean([sizes[i] for i in winning_clients])) if winning_clients else 0.0,
        avg_coalition_quality=(float(np.mean([math.fsum(b.qualities) for b in outcome.winning_bids]))
                               if outcome.winning_bids else 0.0),
        payoffs=payoffs, utilities=utilities,
        avg_client_payoff=math.fsum(payoffs.values()) / n,
        avg_client_utility=math.fsum(utilities.values()) / n,
        test_accuracy=accuracy, training_loss=loss, n_winning_clients=len(winning_clients),
        aggregation_gap=gap,
    )
    logger.info("%s round %d: winners=%s score=%.4f accuracy=%.4f", method, state.round_index,
                list(outcome.winners), record.total_score, accuracy)
    state.round_index += 1
    return record


def run_simulation(config: SimConfig) -> MetricsLog:
    state = init_state(config)
    log = MetricsLog(method=config.method, seed=config.seed)
    for _ in range(config.rounds):
        log.records.append(run_round(state))
    return log
