"""Upper-level multi-attribute scoring auction: equilibrium bids of coalitions and
budget-constrained winner selection."""

import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np
from scipy import optimize, stats

from services.topology import Topology, client_costs
from utils.errors import ConfigError, DivergenceError, DomainError, GuardError
from utils.logger import get_logger
from utils.quadrature import adaptive_simpson

logger = get_logger(__name__)

EXACT_MAX_BIDS = 20
DIVERGENCE_LIMIT = 1e12
SCORE_TIE_TOL = 1e-12


@dataclass(frozen=True)
class ScoringWeights:
    alpha: tuple[float, ...]

    def __post_init__(self):
        if not self.alpha or any(not math.isfinite(a) or a < 0 for a in self.alpha):
            raise ConfigError("quality_weights", f"weights must be finite and >= 0, got {self.alpha}")


@dataclass(frozen=True)
class Bid:
    coalition: int
    price: float
    qualities: tuple[float, ...]
    resource: float

    def __post_init__(self):
        if any(q < 0 for q in self.qualities):
            raise ValueError(f"bid of coalition {self.coalition} has negative quality")
        if self.resource <= 0:
            raise ValueError(f"bid of coalition {self.coalition} requests no resource")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["qualities"] = list(self.qualities)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Bid":
        qualities = data["qualities"]
        if isinstance(qualities, (int, float)):
            qualities = [qualities]
        return cls(coalition=int(data["coalition"]), price=float(data["price"]),
                   qualities=tuple(float(q) for q in qualities), resource=float(data["resource"]))


@dataclass(frozen=True)
class CostDistribution:
    """Distribution F of coalition cost factors on [lower, upper].

    family is "uniform" or "beta:<a>,<b>", the beta law scaled onto the support.
    """
    lower: float
    upper: float
    family: str = "uniform"

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigError("coalition_theta_low", f"support [{self.lower}, {self.upper}] is empty")
        self._frozen  # parse the family eagerly

    @cached_property
    def _frozen(self):
        scale = self.upper - self.lower
        if self.family == "uniform":
            return stats.uniform(loc=self.lower, scale=scale)
        if self.family.startswith("beta:"):
            try:
                a, b = (float(v) for v in self.family[len("beta:"):].split(","))
            except ValueError:
                raise ConfigError("cost_distribution", f"cannot parse {self.family!r}") from None
            if a <= 0 or b <= 0:
                raise ConfigError("cost_distribution", "beta parameters must be > 0")
            return stats.beta(a, b, loc=self.lower, scale=scale)
        raise ConfigError("cost_distribution", f"unknown family {self.family!r}")

    def cdf(self, t: float) -> float:
        return float(self._frozen.cdf(t))

    def contains(self, t: float) -> bool:
        return self.lower - 1e-12 <= t <= self.upper + 1e-12


@dataclass(frozen=True)
class AuctionOutcome:
    winners: tuple[int, ...]
    winning_bids: tuple[Bid, ...]
    assigned_scores: tuple[float, ...]
    total_score: float
    spent_resource: float
    shortfall: int

    @classmethod
    def from_bids(cls, chosen: Sequence[Bid], w: ScoringWeights, winner_count: int) -> "AuctionOutcome":
        scores = tuple(score(b, w) for b in chosen)
        return cls(winners=tuple(b.coalition for b in chosen), winning_bids=tuple(chosen),
                   assigned_scores=scores, total_score=math.fsum(scores),
                   spent_resource=math.fsum(b.resource for b in chosen),
                   shortfall=max(0, winner_count - len(chosen)))

    def to_dict(self) -> dict:
        return {
            "winners": list(self.winners),
            "winning_bids": [b.to_dict() for b in self.winning_bids],
            "assigned_scores": list(self.assigned_scores),
            "total_score": self.total_score,
            "spent_resource": self.spent_resource,
            "shortfall": self.shortfall,
        }


@dataclass(frozen=True)
class CoalitionCostModel:
    """C(Q, theta) = compute_per_unit * Q + theta * (communication + curvature * Q^2 / 2).

    fixed_quality pins the quality the coalition delivers (its aggregate data);
    otherwise quality is chosen strategically up to max_quality.
    """
    compute_per_unit: float
    communication: float
    curvature: float = 0.0
    fixed_quality: float | None = None
    max_quality: float = math.inf

    def __call__(self, qualities: Sequence[float], theta: float) -> float:
        q = math.fsum(qualities)
        return self.compute_per_unit * q + theta * (self.communication + self.curvature * q * q / 2.0)

    def cost_theta(self, qualities: Sequence[float]) -> float:
        q = math.fsum(qualities)
        return self.communication + self.curvature * q * q / 2.0

    def best_response(self, w: ScoringWeights, theta: float) -> tuple[float, ...]:
        """Closed-form quality maximizing score minus cost for a single attribute."""
        if self.fixed_quality is not None:
            return (self.fixed_quality,)
        margin = w.alpha[0] - self.compute_per_unit
        if margin <= 0:
            return (0.0,)
        if self.curvature <= 0 or theta <= 0:
            if math.isinf(self.max_quality):
                raise DivergenceError("linear quality cost below the quality weight has no optimum")
            return (self.max_quality,)
        return (min(margin / (theta * self.curvature), self.max_quality),)


def coalition_theta(members: Sequence[int], topo: Topology, dist: CostDistribution) -> float:
    thetas = [topo.client(i).cost_factor for i in members]
    return float(np.clip(np.mean(thetas), dist.lower, dist.upper))


def coalition_cost_model(members: Sequence[int], server: int, topo: Topology, bid_mode: str = "fixed_quality",
                         curvature: float = 0.0) -> CoalitionCostModel:
    if not members:
        raise ValueError(f"coalition at server {server} is empty")
    compute, communication = 0.0, 0.0
    for i in sorted(members):
        c_cp, c_cm = client_costs(topo.client(i), server, topo)
        compute += c_cp
        communication += c_cm
    data = float(sum(topo.client(i).data_size for i in members))
    if bid_mode == "fixed_quality":
        return CoalitionCostModel(compute_per_unit=compute / data, communication=communication,
                                  fixed_quality=data, max_quality=data)
    return CoalitionCostModel(compute_per_unit=compute / data, communication=communication,
                              curvature=curvature, max_quality=data)


def score(bid: Bid, w: ScoringWeights) -> float:
    if len(bid.qualities) != len(w.alpha):
        raise ConfigError("quality_weights",
                          f"bid carries {len(bid.qualities)} qualities but {len(w.alpha)} weights are set")
    return math.fsum(q * a for q, a in zip(bid.qualities, w.alpha)) - bid.price


def supplier_utility(bid: Bid, cost: float, won: bool) -> float:
    return bid.price - cost if won else 0.0


def _objective(cost_fn: Callable[[Sequence[float], float], float], w: ScoringWeights, theta: float):
    alpha = np.asarray(w.alpha, dtype=float)

    def value(q) -> float:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        return float(q @ alpha) - cost_fn(tuple(q), theta)

    return value


def _expand_upper(value: Callable, lower: float, upper: float) -> float:
    if math.isfinite(upper):
        return upper
    hi = max(lower + 1.0, 1.0)
    while value([2.0 * hi]) > value([hi]):
        hi *= 2.0
        if hi > DIVERGENCE_LIMIT:
            raise DivergenceError("score minus cost keeps growing; cost grows slower than linear")
    return 2.0 * hi


def optimal_quality(cost_fn: Callable[[Sequence[float], float], float], w: ScoringWeights, theta: float,
                    domain: Sequence[float] | Sequence[Sequence[float]] = (0.0, math.inf)) -> tuple[float, ...]:
    """Quality vector maximizing Q . alpha - C(Q, theta) over a box domain.

    A single (low, high) pair bounds every attribute; an infinite high end is
    searched by doubling and raises DivergenceError if the objective is unbounded.
    """
    dims = len(w.alpha)
    bounds = [tuple(b) for b in domain] if isinstance(domain[0], Sequence) else [tuple(domain)] * dims
    if len(bounds) != dims:
        raise ConfigError("quality_weights", f"domain has {len(bounds)} ranges for {dims} weights")
    value = _objective(cost_fn, w, theta)

    if dims == 1:
        lower, upper = float(bounds[0][0]), float(bounds[0][1])
        upper = _expand_upper(value, lower, upper)
        if upper <= lower:
            return (lower,)
        res = optimize.minimize_scalar(lambda q: -value([q]), bounds=(lower, upper), method="bounded",
                                       options={"xatol": 1e-10})
        best = float(res.x)
        # the bounded search never lands exactly on an edge; prefer the edge when it is at least as good
        for edge in (lower, upper):
            if value([edge]) >= value([best]):
                best = edge
        return (best,)

    for k, (lower, upper) in enumerate(bounds):
        if not math.isfinite(upper):
            axis = lambda q, k=k: value([q[0] if j == k else bounds[j][0] for j in range(dims)])
            bounds[k] = (lower, _expand_upper(axis, lower, upper))
    x0 = np.array([(lo + hi) / 2.0 for lo, hi in bounds])
    res = optimize.minimize(lambda q: -value(q), x0=x0, method="L-BFGS-B", bounds=bounds)
    best = np.clip(res.x, [lo for lo, _ in bounds], [hi for _, hi in bounds])
    corner = np.array([lo for lo, _ in bounds])
    if value(corner) >= value(best):
        best = corner
    return tuple(float(q) for q in best)


def equilibrium_profit(theta: float, dist: CostDistribution, n_bidders: int,
                       cost_theta_fn: Callable[[float], float]) -> float:
    """Information rent of a bidder with cost factor theta among n_bidders rivals' types."""
    if n_bidders < 2:
        raise DomainError(f"equilibrium profit needs at least two bidders, got {n_bidders}")
    if not dist.contains(theta):
        raise DomainError(f"cost factor {theta} outside [{dist.lower}, {dist.upper}]")
    if theta >= dist.upper:
        return 0.0
    survival = 1.0 - dist.cdf(theta)
    if survival <= 0.0:
        return 0.0

    def integrand(t: float) -> float:
        return cost_theta_fn(t) * ((1.0 - dist.cdf(t)) / survival) ** (n_bidders - 1)

    return adaptive_simpson(integrand, theta, dist.upper)


def equilibrium_bid(coalition: int, cost_model: CoalitionCostModel, theta: float, dist: CostDistribution,
                    n_bidders: int, w: ScoringWeights, resource: float) -> Bid:
    if cost_model.fixed_quality is not None:
        qualities = (cost_model.fixed_quality,)
    else:
        qualities = optimal_quality(cost_model, w, theta, (0.0, cost_model.max_quality))
    profit = equilibrium_profit(theta, dist, n_bidders,
                                lambda t: cost_model.cost_theta(cost_model.best_response(w, t)))
    price = cost_model(qualities, theta) + profit
    return Bid(coalition=coalition, price=price, qualities=qualities, resource=resource)


def _ranked(bids: Sequence[Bid], w: ScoringWeights) -> list[tuple[float, Bid]]:
    scored = [(score(b, w), b) for b in bids]
    return sorted(scored, key=lambda sb: (-sb[0] / sb[1].resource, sb[1].resource, sb[1].coalition))


def select_winners_greedy(bids: Sequence[Bid], w: ScoringWeights, winner_count: int,
                          budget: float) -> AuctionOutcome:
    """Admit bids by descending score-to-resource ratio while both limits hold.

    A bid that does not fit the remaining budget is passed over and the scan
    continues; negative-score bids are never admitted.
    """
    chosen: list[Bid] = []
    spent = 0.0
    for s, bid in _ranked(bids, w):
        if len(chosen) >= winner_count:
            break
        if s < 0:
            continue
        if spent + bid.resource <= budget:
            chosen.append(bid)
            spent += bid.resource
    return AuctionOutcome.from_bids(chosen, w, winner_count)


def select_winners_exact(bids: Sequence[Bid], w: ScoringWeights, winner_count: int,
                         budget: float) -> AuctionOutcome:
    """Branch and bound over bid subsets.

    Equal totals prefer more winners, then the lexicographically smallest id set,
    so zero-score bids are admitted as the greedy rule admits them.
    """
    if len(bids) > EXACT_MAX_BIDS:
        raise GuardError(f"exact selection is limited to {EXACT_MAX_BIDS} bids, got {len(bids)}")
    items = sorted(((score(b, w), b) for b in bids if score(b, w) >= 0), key=lambda sb: sb[1].coalition)
    best_total, best_set = 0.0, ()

    def _bound(start: int, slots: int) -> float:
        rest = sorted((s for s, _ in items[start:]), reverse=True)
        return math.fsum(rest[:slots])

    def _search(index: int, chosen: tuple[int, ...], total: float, spent: float):
        nonlocal best_total, best_set
        if total > best_total + SCORE_TIE_TOL or (abs(total - best_total) <= SCORE_TIE_TOL
                                                  and (-len(chosen), chosen) < (-len(best_set), best_set)):
            best_total, best_set = total, chosen
        slots = winner_count - len(chosen)
        if index >= len(items) or slots <= 0:
            return
        if total + _bound(index, slots) < best_total - SCORE_TIE_TOL:
            return
        s, bid = items[index]
        if spent + bid.resource <= budget:
            _search(index + 1, chosen + (index,), total + s, spent + bid.resource)
        _search(index + 1, chosen, total, spent)

    _search(0, (), 0.0, 0.0)
    chosen = [items[k][1] for k in best_set]
    return AuctionOutcome.from_bids(chosen, w, winner_count)


def select_winners_sampled(bids: Sequence[Bid], w: ScoringWeights, winner_count: int, budget: float,
                           rng: np.random.Generator) -> AuctionOutcome:
    """Draw winners without replacement with probability proportional to max(score, 0).

    Only bids that still fit the budget are drawn; all-zero weights fall back to
    a uniform draw.
    """
    remaining = sorted(bids, key=lambda b: b.coalition)
    chosen: list[Bid] = []
    spent = 0.0
    while len(chosen) < winner_count:
        fitting = [b for b in remaining if spent + b.resource <= budget]
        if not fitting:
            break
        weights = np.array([max(score(b, w), 0.0) for b in fitting])
        probs = weights / weights.sum() if weights.sum() > 0 else np.full(len(fitting), 1.0 / len(fitting))
        pick = fitting[int(rng.choice(len(fitting), p=probs))]
        chosen.append(pick)
        remaining.remove(pick)
        spent += pick.resource
    return AuctionOutcome.from_bids(chosen, w, winner_count)


def select_winners_random(bids: Sequence[Bid], w: ScoringWeights, winner_count: int, budget: float,
                          rng: np.random.Generator) -> AuctionOutcome:
    """Scan bids in random order and admit each one that fits, ignoring scores."""
    ordered = sorted(bids, key=lambda b: b.coalition)
    chosen: list[Bid] = []
    spent = 0.0
    for k in rng.permutation(len(ordered)):
        if len(chosen) >= winner_count:
            break
        bid = ordered[int(k)]
        if spent + bid.resource <= budget:
            chosen.append(bid)
            spent += bid.resource
    return AuctionOutcome.from_bids(chosen, w, winner_count)
