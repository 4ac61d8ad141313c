import json

import numpy as np
import pytest
from helpers import tiny_architecture

from partmask_hub.core.exceptions import EmptyInputError, InvalidParameterError
from partmask_hub.core import trainer
from partmask_hub.core.network import Network, default_architecture
from partmask_hub.core.tensor import TaskLossKind, encode_labels, task_loss
from partmask_hub.core.trainer import (
    EPOCH_LOG_KEYS,
    LabeledSet,
    TrainConfig,
    evaluate_accuracy,
    lambda_schedule,
    mean_peaks,
    train,
)
from partmask_hub.evaluation import metrics, report
from partmask_hub.evaluation.report import evaluate_network
from partmask_hub.logging_config import TRAIN_LOGGER_NAME


@pytest.fixture
def dataset(scenes):
    return LabeledSet(
        images=np.stack([scene.image for scene in scenes]),
        categories=np.array([scene.category for scene in scenes]),
    )


def _fresh_net(seed=4):
    return Network.initialize(tiny_architecture(num_categories=6), seed=seed)


def test_lambda_schedule_decays_with_epoch():
    assert lambda_schedule(2.0, 1, 0.5) == pytest.approx(1.0)
    assert lambda_schedule(2.0, 4, 0.5) == pytest.approx(0.25)
    assert lambda_schedule(0.0, 3, 0.5) == 0.0


@pytest.mark.parametrize(
    "kwargs",
    [{"epochs": 0}, {"batch_size": 0}, {"lr": -0.1}, {"momentum": 1.0}],
)
def test_train_config_validation(kwargs):
    with pytest.raises(InvalidParameterError):
        TrainConfig(**kwargs)


def test_mean_peaks_per_site(dataset):
    net = _fresh_net()
    peaks = mean_peaks(net, dataset.images)
    assert list(peaks) == [4]
    record = net.forward(dataset.images).records[0]
    assert peaks[4] == pytest.approx(record.raw.max(axis=(2, 3)).mean())


def test_train_assigns_categories_and_logs(dataset):
    calls = []
    config = TrainConfig(epochs=2, batch_size=8, lr=0.01)
    result = train(
        _fresh_net(),
        dataset,
        config,
        on_epoch_end=lambda epoch, net, states: calls.append(epoch),
    )
    assert calls == [1, 2]
    assert [record.epoch for record in result.log] == [1, 2]
    assert all(state.target_category in range(6) for state in result.states[4])
    first = json.loads(result.log[0].to_json())
    assert tuple(first) == EPOCH_LOG_KEYS
    assert 0.0 <= first["train_acc"] <= 1.0
    assert result.log[0].lam > 0.0


def test_training_is_deterministic(dataset):
    config = TrainConfig(epochs=2, batch_size=6, seed=3)
    first = train(_fresh_net(), dataset, config)
    second = train(_fresh_net(), dataset, config)
    for name, value in first.net.params.items():
        np.testing.assert_array_equal(value, second.net.params[name])
    assert [r.to_json() for r in first.log] == [r.to_json() for r in second.log]


def test_without_filter_loss_lambda_is_zero(dataset):
    config = TrainConfig(epochs=1, batch_size=12, filter_loss=False)
    result = train(_fresh_net(), dataset, config)
    assert result.log[0].lam == 0.0


def test_zero_learning_rate_keeps_parameters(dataset):
    net = _fresh_net()
    before = {name: value.copy() for name, value in net.params.items()}
    train(net, dataset, TrainConfig(epochs=1, batch_size=12, lr=0.0))
    for name, value in before.items():
        np.testing.assert_array_equal(net.params[name], value)


def test_empty_dataset_rejected():
    empty = LabeledSet(images=np.zeros((0, 32, 32)), categories=np.zeros(0, int))
    with pytest.raises(EmptyInputError):
        train(_fresh_net(), empty, TrainConfig(epochs=1))


def test_evaluate_accuracy_in_unit_interval(dataset):
    accuracy = evaluate_accuracy(_fresh_net(), dataset)
    assert 0.0 <= accuracy <= 1.0


def _dataset_loss(net, dataset):
    logits = net.forward(dataset.images).logits
    labels = encode_labels(dataset.categories, 6, TaskLossKind.SOFTMAX)
    return task_loss(logits, labels, TaskLossKind.SOFTMAX)[0]


def test_masked_network_fits_training_scenes(dataset):
    net = _fresh_net(seed=6)
    initial = _dataset_loss(net, dataset)
    config = TrainConfig(epochs=8, batch_size=6, lr=0.05, filter_loss=False)
    result = train(net, dataset, config)
    assert _dataset_loss(result.net, dataset) < initial - 0.05
    assert result.log[-1].task_loss < result.log[0].task_loss


def test_two_interpretable_layers_train_and_evaluate(dataset, scenes):
    net = Network.initialize(default_architecture(6, interp_layers=2), seed=1)
    result = train(net, dataset, TrainConfig(epochs=1, batch_size=12))
    assert sorted(result.states) == [6, 9]
    for site_states in result.states.values():
        assert all(state.target_category in range(6) for state in site_states)
    summary = evaluate_network(result.net, result.states, scenes, top_m=10)
    assert len(summary.filters) == 32
    assert sorted(summary.site_purity) == [6, 9]
    assert all(m.category_source == "train" for m in summary.filters)
    assert 0.0 <= summary.accuracy <= 1.0


def test_module_loggers_have_no_handlers_of_their_own():
    modules = ((trainer, "trainer"), (metrics, "metrics"), (report, "report"))
    for module, name in modules:
        assert module.logger.name == f"{TRAIN_LOGGER_NAME}.{name}"
        assert module.logger.handlers == []
        assert module.logger.propagate
