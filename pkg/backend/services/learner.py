"""Lightweight learner behind the simulator: a synthetic classification task, its
Dirichlet split across clients, and multinomial logistic regression trained
with mini-batch gradient descent."""

import math
from abc import ABC, abstractmethod
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from sklearn.datasets import make_classification
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from utils.config import SimConfig
from utils.errors import AggregationMismatchError, ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)

HIERARCHY_TOL = 1e-10


@dataclass(frozen=True)
class SyntheticTask:
    train_features: np.ndarray
    train_labels: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    n_classes: int


@dataclass(frozen=True)
class LearnerDataset:
    client_features: tuple[np.ndarray, ...]
    client_labels: tuple[np.ndarray, ...]
    test_features: np.ndarray
    test_labels: np.ndarray
    n_classes: int

    @property
    def sizes(self) -> list[int]:
        return [len(y) for y in self.client_labels]

    @property
    def total_samples(self) -> int:
        return sum(self.sizes)

    def class_proportions(self) -> np.ndarray:
        """(n_classes, n_clients) share of each class held by each client."""
        counts = np.array([np.bincount(y, minlength=self.n_classes) for y in self.client_labels]).T
        totals = counts.sum(axis=1, keepdims=True)
        return np.divide(counts, totals, out=np.zeros(counts.shape, dtype=float), where=totals > 0)


@dataclass
class GlobalModel:
    parameters: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.parameters)):
            raise ValueError("model parameters must be finite")

    @property
    def dimension(self) -> int:
        return int(self.parameters.size)


def synthetic_task(config: SimConfig, random_state: int) -> SyntheticTask:
    n_informative = min(config.n_features,
                        max(math.ceil(math.log2(config.n_classes)) + 1, config.n_features // 2))
    features, labels = make_classification(
        n_samples=config.n_samples, n_features=config.n_features, n_informative=n_informative,
        n_redundant=0, n_classes=config.n_classes, n_clusters_per_class=1,
        class_sep=config.class_separation, random_state=random_state,
    )
    x_train, x_test, y_train, y_test = train_test_split(
        features, labels, test_size=config.test_fraction, stratify=labels, random_state=random_state)
    scaler = StandardScaler().fit(x_train)
    return SyntheticTask(train_features=scaler.transform(x_train), train_labels=y_train.astype(np.int64),
                         test_features=scaler.transform(x_test), test_labels=y_test.astype(np.int64),
                         n_classes=config.n_classes)


def dirichlet_partition(task: SyntheticTask, n_clients: int, beta: float,
                        rng: np.random.Generator) -> LearnerDataset:
    """Split the training set so each class's client shares follow Dir(beta).

    Clients the draw leaves empty take one sample from the largest client.
    """
    if beta <= 0:
        raise ConfigError("dirichlet_beta", "must be > 0")
    if n_clients < 1:
        raise ConfigError("n_clients", "must be >= 1")
    n_train = len(task.train_labels)
    if n_train < n_clients:
        raise ConfigError("n_samples", f"{n_train} training samples cannot cover {n_clients} clients")

    shards: list[list[int]] = [[] for _ in range(n_clients)]
    for c in range(task.n_classes):
        idx = np.flatnonzero(task.train_labels == c)
        idx = idx[rng.permutation(len(idx))]
        shares = rng.dirichlet(np.full(n_clients, beta))
        cuts = (np.cumsum(shares)[:-1] * len(idx)).astype(int)
        for client, part in enumerate(np.split(idx, cuts)):
            shards[client].extend(part.tolist())

    topped_up = 0
    for client in range(n_clients):
        if not shards[client]:
            donor = max(range(n_clients), key=lambda k: (len(shards[k]), -k))
            shards[client].append(shards[donor].pop())
            topped_up += 1
    if topped_up:
        logger.debug("Dirichlet split left %d clients empty; topped each up with one sample", topped_up)

    order = [np.array(sorted(s), dtype=np.int64) for s in shards]
    return LearnerDataset(client_features=tuple(task.train_features[o] for o in order),
                          client_labels=tuple(task.train_labels[o] for o in order),
                          test_features=task.test_features, test_labels=task.test_labels,
                          n_classes=task.n_classes)


class Learner(ABC):
    @abstractmethod
    def init_params(self) -> np.ndarray:
        ...

    @abstractmethod
    def loss(self, params: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
        ...

    @abstractmethod
    def gradient(self, params: np.ndarray, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def predict(self, params: np.ndarray, features: np.ndarray) -> np.ndarray:
        ...

    def accuracy(self, params: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(params, features) == labels))


class SoftmaxRegression(Learner):
    """Multinomial logistic regression; parameters are a flat (n_features + 1) x n_classes matrix."""

    def __init__(self, n_features: int, n_classes: int):
        self.n_features = n_features
        self.n_classes = n_classes

    def init_params(self) -> np.ndarray:
        return np.zeros((self.n_features + 1) * self.n_classes)

    def _weights(self, params: np.ndarray) -> np.ndarray:
        return params.reshape(self.n_features + 1, self.n_classes)

    @staticmethod
    def _with_bias(features: np.ndarray) -> np.ndarray:
        return np.hstack([features, np.ones((len(features), 1))])

    def _probabilities(self, params: np.ndarray, features: np.ndarray) -> np.ndarray:
        logits = self._with_bias(features) @ self._weights(params)
        logits -= logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        return exp / exp.sum(axis=1, keepdims=True)

    def loss(self, params, features, labels) -> float:
        probs = self._probabilities(params, features)
        return float(-np.mean(np.log(probs[np.arange(len(labels)), labels] + 1e-300)))

    def gradient(self, params, features, labels) -> np.ndarray:
        probs = self._probabilities(params, features)
        probs[np.arange(len(labels)), labels] -= 1.0
        return (self._with_bias(features).T @ probs / len(labels)).ravel()

    def predict(self, params, features) -> np.ndarray:
        return np.argmax(self._with_bias(features) @ self._weights(params), axis=1)


def local_train(learner: Learner, params: np.ndarray, features: np.ndarray, labels: np.ndarray,
                epochs: int, lr: float, batch_size: int, rng: np.random.Generator,
                loss_trace: list[float] | None = None) -> np.ndarray | None:
    """Mini-batch gradient descent from params; None signals a client with no data."""
    if len(labels) == 0:
        return None
    y = params.copy()
    n = len(labels)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            y -= lr * learner.gradient(y, features[batch], labels[batch])
        if loss_trace is not None:
            loss_trace.append(learner.loss(y, features, labels))
    return y


def aggregation_weights(sizes: Sequence[float]) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    return sizes / sizes.sum()


def aggregate(updates: Sequence[tuple[np.ndarray, float]]) -> np.ndarray | None:
    """Data-weighted mean renormalized over the participants; None when nobody participated."""
    if not updates:
        return None
    stacked = np.stack([params for params, _ in updates])
    return np.average(stacked, axis=0, weights=aggregation_weights([d for _, d in updates]))


def hierarchical_aggregate(groups: Mapping[int, Sequence[tuple[np.ndarray, float]]]) -> tuple[np.ndarray | None, float]:
    """Edge aggregation per server, then central aggregation of the edge models.

    Returns the model and its largest deviation from the flat weighted mean.
    """
    edges = []
    flat = []
    for server in sorted(groups):
        updates = list(groups[server])
        if not updates:
            continue
        edges.append((aggregate(updates), math.fsum(d for _, d in updates)))
        flat.extend(updates)
    central = aggregate(edges)
    if central is None:
        return None, 0.0
    gap = float(np.max(np.abs(central - aggregate(flat))))
    if gap > HIERARCHY_TOL:
        raise AggregationMismatchError(f"hierarchical aggregation deviates from the flat mean by {gap:.3e}")
    return central, gap
