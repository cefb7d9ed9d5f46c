"""Auction-aware preferences of clients over edge-server-anchored coalitions."""

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from services.topology import Topology, total_cost
from utils.errors import InfeasibleLinkError, InvalidCoalitionError

TIE_REL_TOL = 1e-9


@dataclass(frozen=True)
class PayoffEstimator:
    """R_hat(S) per coalition id, updated by exponential moving average."""
    ema_coefficient: float
    prior: float = 0.0
    estimates: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.ema_coefficient <= 1.0:
            raise ValueError(f"ema_coefficient must lie in [0, 1], got {self.ema_coefficient}")

    def estimate(self, coalition: int) -> float:
        return self.estimates.get(coalition, self.prior)


def update_payoff_estimate(est: PayoffEstimator, coalition: int, realized: float,
                           selected: bool) -> PayoffEstimator:
    # unselected coalitions keep their estimate; zero earnings are not averaged in
    old = est.estimate(coalition)
    new = est.ema_coefficient * old + (1.0 - est.ema_coefficient) * realized if selected else old
    return replace(est, estimates={**est.estimates, coalition: new})


@dataclass
class ClientHistory:
    joined: set[int] = field(default_factory=set)


def client_payoff(d_i: float, coalition_data: float, estimate: float) -> float:
    if coalition_data <= 0:
        raise InvalidCoalitionError("coalition holds no data")
    if d_i <= 0 or d_i > coalition_data * (1.0 + 1e-12):
        raise InvalidCoalitionError(f"client share {d_i} outside coalition total {coalition_data}")
    return d_i * estimate / coalition_data


def client_utility(payoff: float, cost: float) -> float:
    return payoff - cost


def preference_value(utility: float, coalition: int, history: ClientHistory) -> float:
    return 0.0 if coalition in history.joined else utility


@dataclass(frozen=True)
class PreferenceProfile:
    """A weak order: equivalence classes listed best first."""
    owner: int
    ranking: tuple[frozenset[int], ...]

    def __post_init__(self):
        seen = set()
        for cls in self.ranking:
            if not cls:
                raise ValueError("empty indifference class")
            if seen & cls:
                raise ValueError(f"candidate ranked twice in profile of client {self.owner}")
            seen |= cls

    @classmethod
    def from_lists(cls, owner: int, ranking: Iterable[Iterable[int]]) -> "PreferenceProfile":
        return cls(owner=owner, ranking=tuple(frozenset(c) for c in ranking))

    @classmethod
    def strict(cls, owner: int, order: Iterable[int]) -> "PreferenceProfile":
        return cls.from_lists(owner, [[k] for k in order])

    @property
    def candidates(self) -> frozenset[int]:
        return frozenset().union(*self.ranking)

    @property
    def top_class(self) -> frozenset[int]:
        return self.ranking[0]

    @property
    def strict_pairs(self) -> int:
        """Number of strict steps between consecutive indifference classes."""
        return len(self.ranking) - 1

    def rank_of(self, candidate: int) -> int:
        for index, cls in enumerate(self.ranking):
            if candidate in cls:
                return index
        raise KeyError(f"candidate {candidate} not ranked by client {self.owner}")

    def relaxed(self) -> "PreferenceProfile":
        return PreferenceProfile(owner=self.owner, ranking=(self.candidates,))

    def to_json(self) -> list[list[int]]:
        return [sorted(cls) for cls in self.ranking]


@dataclass(frozen=True)
class CoalitionSnapshot:
    """The coalition anchored at a server as it stood after the previous round."""
    server: int
    members: frozenset[int]
    data: float


def rank_values(owner: int, values: Mapping[int, float]) -> PreferenceProfile:
    """Sort candidates by descending value; values within TIE_REL_TOL of a class's best share it."""
    order = sorted(values, key=lambda k: (-values[k], k))
    ranking: list[list[int]] = []
    head = None
    for k in order:
        v = values[k]
        # compared against the class head so near-ties do not chain
        if head is not None and math.isclose(v, head, rel_tol=TIE_REL_TOL):
            ranking[-1].append(k)
        else:
            ranking.append([k])
            head = v
    return PreferenceProfile.from_lists(owner, ranking)


def coalition_values(client: int, candidates: Iterable[CoalitionSnapshot], estimator: PayoffEstimator,
                     history: ClientHistory, topo: Topology) -> dict[int, float]:
    node = topo.client(client)
    values = {}
    for snap in candidates:
        coalition_data = snap.data if client in snap.members else snap.data + node.data_size
        try:
            cost = total_cost(node, snap.server, topo)
        except InfeasibleLinkError:
            values[snap.server] = -math.inf
            continue
        payoff = client_payoff(node.data_size, coalition_data, estimator.estimate(snap.server))
        values[snap.server] = preference_value(client_utility(payoff, cost), snap.server, history)
    return values


def build_preference_profile(client: int, candidates: list[CoalitionSnapshot], estimator: PayoffEstimator,
                             history: ClientHistory, topo: Topology) -> PreferenceProfile:
    if not candidates:
        raise ValueError("at least one coalition candidate is required")
    return rank_values(client, coalition_values(client, candidates, estimator, history, topo))
