"""Lower-level coalition formation: perfect partitions, preference refinement and
Pareto-optimal partitioning (POP), with exhaustive oracles for small instances."""

import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from services.preference import PreferenceProfile
from utils.errors import GuardError, InfeasibleInstanceError, RefinementError
from utils.logger import get_logger

logger = get_logger(__name__)

ORACLE_MAX_CLIENTS = 10
ORACLE_MAX_SERVERS = 4


@dataclass(frozen=True)
class Partition:
    """Server id -> member client ids. Every server appears, idle ones with no members."""
    coalitions: Mapping[int, frozenset[int]]

    @classmethod
    def from_assignment(cls, servers: Sequence[int], assignment: Mapping[int, int]) -> "Partition":
        members: dict[int, set[int]] = {s: set() for s in servers}
        for client, server in assignment.items():
            members[server].add(client)
        return cls({s: frozenset(members[s]) for s in sorted(servers)})

    @property
    def assignment(self) -> dict[int, int]:
        return {i: s for s, members in self.coalitions.items() for i in members}

    def server_of(self, client: int) -> int:
        for s, members in self.coalitions.items():
            if client in members:
                return s
        raise KeyError(f"client {client} is not in the partition")

    def validate(self, clients: Sequence[int], capacity: int):
        seen: set[int] = set()
        for s, members in self.coalitions.items():
            if len(members) > capacity:
                raise ValueError(f"coalition at server {s} exceeds capacity {capacity}")
            if seen & members:
                raise ValueError(f"coalitions overlap at server {s}")
            seen |= members
        if seen != set(clients):
            raise ValueError("partition does not cover every client exactly once")

    def to_json(self) -> dict[str, list[int]]:
        return {str(s): sorted(members) for s, members in self.coalitions.items()}

    @classmethod
    def from_json(cls, data: Mapping[str, Sequence[int]]) -> "Partition":
        return cls({int(s): frozenset(members) for s, members in sorted(data.items(), key=lambda kv: int(kv[0]))})

    def __str__(self):
        return json.dumps(self.to_json())


@dataclass(frozen=True)
class HedonicInstance:
    clients: tuple[int, ...]
    servers: tuple[int, ...]
    profiles: Mapping[int, PreferenceProfile]
    capacity: int
    data_sizes: Mapping[int, float] | None = None


def is_coarsening(bottom: PreferenceProfile, top: PreferenceProfile) -> bool:
    """True when every class of bottom is a contiguous run of top's classes, in order."""
    if bottom.candidates != top.candidates:
        return False
    position = 0
    for cls in bottom.ranking:
        covered: set[int] = set()
        while position < len(top.ranking) and len(covered) < len(cls):
            covered |= top.ranking[position]
            position += 1
        if covered != cls:
            return False
    return position == len(top.ranking)


def refine(bottom: PreferenceProfile, top: PreferenceProfile) -> PreferenceProfile:
    """Turn exactly one indifference of bottom into the strict preference top holds.

    The lowest-ranked bottom class that top splits loses its lowest top class, so
    refining a fully relaxed profile shrinks its top class one true class at a time.
    """
    if bottom.ranking == top.ranking:
        raise RefinementError(f"profile of client {bottom.owner} is already fully refined")
    if not is_coarsening(bottom, top):
        raise RefinementError(f"profile of client {bottom.owner} is not a coarsening of its target")

    ranking = list(bottom.ranking)
    position = len(top.ranking)
    for index in range(len(ranking) - 1, -1, -1):
        parts: list[frozenset[int]] = []
        remaining = set(ranking[index])
        while remaining:
            position -= 1
            parts.insert(0, top.ranking[position])
            remaining -= top.ranking[position]
        if len(parts) > 1:
            ranking[index:index + 1] = [frozenset().union(*parts[:-1]), parts[-1]]
            return PreferenceProfile(owner=bottom.owner, ranking=tuple(ranking))
    raise RefinementError(f"nothing to refine for client {bottom.owner}")


@dataclass
class ProfileLattice:
    top: dict[int, PreferenceProfile]
    bottom: dict[int, PreferenceProfile]
    cursor: dict[int, int] = field(default_factory=dict)

    @classmethod
    def relaxed(cls, profiles: Mapping[int, PreferenceProfile]) -> "ProfileLattice":
        top = dict(profiles)
        bottom = {i: p.relaxed() for i, p in profiles.items()}
        return cls(top=top, bottom=bottom, cursor={i: p.strict_pairs for i, p in profiles.items()})

    def settled(self, client: int) -> bool:
        return self.bottom[client].ranking == self.top[client].ranking

    def accept(self, client: int, refined: PreferenceProfile):
        self.bottom[client] = refined
        self.cursor[client] -= 1

    def freeze(self, client: int):
        self.top[client] = self.bottom[client]
        self.cursor[client] = 0


def _server_order(clients: Sequence[int], data_sizes: Mapping[int, float] | None,
                  rng: np.random.Generator) -> list[int]:
    # servers rank clients by data size; the shuffle breaks ties
    shuffled = [clients[k] for k in rng.permutation(len(clients))]
    if data_sizes is None:
        return shuffled
    return sorted(shuffled, key=lambda i: -data_sizes[i])


def perfect_partition(clients: Sequence[int], servers: Sequence[int],
                      profiles: Mapping[int, PreferenceProfile], capacity: int,
                      rng: np.random.Generator,
                      data_sizes: Mapping[int, float] | None = None) -> Partition | None:
    """A capacity-respecting partition giving every client a top-class server, or None.

    Servers visit their shuffled preference lists and admit clients that rank them
    top; clients left over are placed along augmenting paths, so None means no
    perfect partition exists.
    """
    top = {i: profiles[i].top_class for i in clients}
    members: dict[int, list[int]] = {s: [] for s in servers}
    where: dict[int, int] = {}

    preference_list = _server_order(list(clients), data_sizes, rng)
    search = [servers[k] for k in rng.permutation(len(servers))]
    for s in search:
        for i in preference_list:
            if len(members[s]) >= capacity:
                break
            if i not in where and s in top[i]:
                members[s].append(i)
                where[i] = s

    def _place(i: int, visited: set[int]) -> bool:
        for s in sorted(top[i]):
            if s in visited or s not in members:
                continue
            visited.add(s)
            if len(members[s]) < capacity:
                members[s].append(i)
                where[i] = s
                return True
            for j in list(members[s]):
                if _place(j, visited):
                    members[s].remove(j)
                    members[s].append(i)
                    where[i] = s
                    return True
        return False

    for i in clients:
        if i not in where and not _place(i, set()):
            return None
    return Partition({s: frozenset(members[s]) for s in sorted(servers)})


def pop(clients: Sequence[int], servers: Sequence[int], profiles: Mapping[int, PreferenceProfile],
        capacity: int, rng: np.random.Generator, data_sizes: Mapping[int, float] | None = None,
        stats: dict | None = None) -> Partition:
    """Pareto-optimal partition for the true profiles.

    Clients are refined in ascending id order; another order can return a
    different Pareto-optimal partition.
    """
    if capacity * len(servers) < len(clients):
        raise InfeasibleInstanceError(
            f"{len(servers)} servers of capacity {capacity} cannot host {len(clients)} clients")
    lattice = ProfileLattice.relaxed({i: profiles[i] for i in clients})
    best = perfect_partition(clients, servers, lattice.bottom, capacity, rng, data_sizes)
    if best is None:
        raise InfeasibleInstanceError("no partition exists for the relaxed profiles")

    bound = sum(p.strict_pairs for p in lattice.top.values())
    iterations = 0
    for i in sorted(clients):
        while not lattice.settled(i):
            candidate = refine(lattice.bottom[i], lattice.top[i])
            iterations += 1
            if iterations > bound:
                raise RuntimeError(f"POP exceeded its refinement bound {bound}")
            if best.server_of(i) in candidate.top_class:
                # best already serves every current bottom profile and the refined one
                found = best
            else:
                trial = {**lattice.bottom, i: candidate}
                found = perfect_partition(clients, servers, trial, capacity, rng, data_sizes)
            if found is not None:
                best = found
                lattice.accept(i, candidate)
            else:
                lattice.freeze(i)

    logger.debug("POP finished after %d refinements (bound %d)", iterations, bound)
    if stats is not None:
        stats.update(iterations=iterations, bound=bound)
    return best


def pareto_dominates(a: Partition, b: Partition, profiles: Mapping[int, PreferenceProfile]) -> bool:
    where_a, where_b = a.assignment, b.assignment
    strictly_better = False
    for i, profile in profiles.items():
        rank_a, rank_b = profile.rank_of(where_a[i]), profile.rank_of(where_b[i])
        if rank_a > rank_b:
            return False
        if rank_a < rank_b:
            strictly_better = True
    return strictly_better


def enumerate_partitions(instance: HedonicInstance) -> Iterator[Partition]:
    """Every capacity-feasible partition of a small instance."""
    if len(instance.clients) > ORACLE_MAX_CLIENTS or len(instance.servers) > ORACLE_MAX_SERVERS:
        raise GuardError(f"exhaustive enumeration is limited to {ORACLE_MAX_CLIENTS} clients "
                         f"and {ORACLE_MAX_SERVERS} servers")
    for choice in itertools.product(instance.servers, repeat=len(instance.clients)):
        if max(Counter(choice).values(), default=0) <= instance.capacity:
            yield Partition.from_assignment(instance.servers, dict(zip(instance.clients, choice)))


def is_pareto_optimal_bruteforce(p: Partition, instance: HedonicInstance) -> bool:
    return not any(pareto_dominates(q, p, instance.profiles) for q in enumerate_partitions(instance))
