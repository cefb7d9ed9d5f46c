import numpy as np
import pytest

from services.learner import (GlobalModel, SoftmaxRegression, aggregate, aggregation_weights, dirichlet_partition,
                              hierarchical_aggregate, local_train, synthetic_task)
from utils.errors import AggregationMismatchError, ConfigError


@pytest.fixture
def task(small_config):
    return synthetic_task(small_config, random_state=0)


def test_synthetic_task_shapes(task, small_config):
    n_test = len(task.test_labels)
    assert len(task.train_labels) + n_test == small_config.n_samples
    assert task.train_features.shape[1] == small_config.n_features
    assert set(np.unique(task.train_labels)) == set(range(small_config.n_classes))


def test_dirichlet_partition_covers_training_set(task):
    data = dirichlet_partition(task, 12, 0.5, np.random.default_rng(0))
    assert data.total_samples == len(task.train_labels)
    assert all(size >= 1 for size in data.sizes)
    proportions = data.class_proportions()
    assert proportions.shape == (task.n_classes, 12)
    assert np.allclose(proportions.sum(axis=1), 1.0)


def test_small_beta_skews_labels_more_than_large_beta(task):
    def skew(beta):
        data = dirichlet_partition(task, 12, beta, np.random.default_rng(1))
        return float(np.mean(data.class_proportions().max(axis=1)))

    assert skew(0.05) > skew(100.0)


def test_every_client_gets_data_under_extreme_skew(task):
    data = dirichlet_partition(task, 40, 0.01, np.random.default_rng(2))
    assert min(data.sizes) >= 1
    assert data.total_samples == len(task.train_labels)


def test_dirichlet_partition_rejects_bad_input(task):
    with pytest.raises(ConfigError):
        dirichlet_partition(task, 12, 0.0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        dirichlet_partition(task, len(task.train_labels) + 1, 0.5, np.random.default_rng(0))


def test_zero_learning_rate_keeps_parameters(task):
    learner = SoftmaxRegression(task.train_features.shape[1], task.n_classes)
    start = np.random.default_rng(0).normal(size=learner.init_params().shape)
    out = local_train(learner, start, task.train_features, task.train_labels, 3, 0.0, 16, np.random.default_rng(0))
    assert np.array_equal(out, start)


def test_zero_epochs_returns_a_copy(task):
    learner = SoftmaxRegression(task.train_features.shape[1], task.n_classes)
    start = learner.init_params()
    out = local_train(learner, start, task.train_features, task.train_labels, 0, 0.1, 16, np.random.default_rng(0))
    assert np.array_equal(out, start) and out is not start


def test_empty_client_returns_none(task):
    learner = SoftmaxRegression(task.train_features.shape[1], task.n_classes)
    empty = np.empty((0, task.train_features.shape[1]))
    assert local_train(learner, learner.init_params(), empty, np.empty(0, dtype=np.int64), 1, 0.1, 16,
                       np.random.default_rng(0)) is None


def test_full_batch_descent_lowers_loss(task):
    learner = SoftmaxRegression(task.train_features.shape[1], task.n_classes)
    trace = []
    params = local_train(learner, learner.init_params(), task.train_features, task.train_labels, 20, 0.1,
                         len(task.train_labels), np.random.default_rng(0), loss_trace=trace)
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
    assert trace[-1] < learner.loss(learner.init_params(), task.train_features, task.train_labels)
    assert learner.accuracy(params, task.test_features, task.test_labels) > 1.0 / task.n_classes


def test_gradient_matches_finite_differences(task):
    learner = SoftmaxRegression(task.train_features.shape[1], task.n_classes)
    x, y = task.train_features[:50], task.train_labels[:50]
    params = np.random.default_rng(3).normal(scale=0.1, size=learner.init_params().shape)
    grad = learner.gradient(params, x, y)
    eps = 1e-6
    for k in (0, 5, len(params) - 1):
        step = np.zeros_like(params)
        step[k] = eps
        numeric = (learner.loss(params + step, x, y) - learner.loss(params - step, x, y)) / (2 * eps)
        assert grad[k] == pytest.approx(numeric, abs=1e-6)


def test_aggregation_weights():
    assert np.allclose(aggregation_weights([1, 3]), [0.25, 0.75])


def test_aggregate_weighted_mean():
    out = aggregate([(np.array([0.0, 2.0]), 1.0), (np.array([4.0, 2.0]), 3.0)])
    assert np.allclose(out, [3.0, 2.0])
    assert aggregate([]) is None


def test_single_participant_aggregate_is_identity():
    params = np.array([1.5, -2.0, 0.25])
    assert np.array_equal(aggregate([(params, 7.0)]), params)


def test_hierarchical_matches_flat_mean():
    rng = np.random.default_rng(4)
    for _ in range(50):
        groups = {s: [(rng.normal(size=6), float(rng.integers(1, 50))) for _ in range(int(rng.integers(0, 4)))]
                  for s in range(3)}
        central, gap = hierarchical_aggregate(groups)
        flat = [u for s in sorted(groups) for u in groups[s]]
        if not flat:
            assert central is None and gap == 0.0
            continue
        assert gap <= 1e-10
        assert np.allclose(central, aggregate(flat), atol=1e-10)


def test_hierarchical_raises_on_inconsistent_weights(monkeypatch):
    import services.learner as learner_module

    real = learner_module.aggregate
    calls = {"n": 0}

    def skewed(updates):
        calls["n"] += 1
        out = real(updates)
        return None if out is None else out + (1.0 if calls["n"] == 1 else 0.0)

    monkeypatch.setattr(learner_module, "aggregate", skewed)
    with pytest.raises(AggregationMismatchError):
        hierarchical_aggregate({0: [(np.zeros(2), 1.0)], 1: [(np.ones(2), 1.0)]})


def test_global_model_rejects_nan():
    with pytest.raises(ValueError):
        GlobalModel(np.array([0.0, np.nan]))
    assert GlobalModel(np.zeros(4)).dimension == 4
