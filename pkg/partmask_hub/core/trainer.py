"""Сквозное обучение интерпретируемой сети: эпохи, lambda_t и назначение c^."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, NamedTuple, Sequence

import numpy as np

from partmask_hub.core.exceptions import (
    EmptyInputError,
    InvalidParameterError,
    ShapeMismatchError,
)
from partmask_hub.core.filter_loss import DEFAULT_DECAY, CategoryTally, FilterState
from partmask_hub.core.network import Network, Optimizer, backward_and_step
from partmask_hub.core.tensor import TaskLossKind, Tensor, count_correct
from partmask_hub.core.utils import validate_int_at_least, validate_open_unit
from partmask_hub.logging_config import train_child_logger

logger = train_child_logger("trainer")

EPOCH_LOG_KEYS = ("epoch", "task_loss", "filter_loss", "train_acc", "lambda")
PROBE_BATCH = 64


@dataclass(frozen=True)
class TrainConfig:
    """Гиперпараметры прогона; lr=0 допустим (параметры не меняются)."""

    epochs: int = 40
    batch_size: int = 16
    lr: float = 0.02
    momentum: float = 0.9
    lambda_k: float = 1.0
    seed: int = 7
    loss_kind: TaskLossKind = TaskLossKind.SOFTMAX
    filter_loss: bool = True
    ema_decay: float = DEFAULT_DECAY
    workers: int = 1

    def __post_init__(self) -> None:
        validate_int_at_least("epochs", self.epochs, 1)
        validate_int_at_least("batch_size", self.batch_size, 1)
        validate_int_at_least("workers", self.workers, 1)
        if self.lr < 0:
            raise InvalidParameterError(name="lr", value=self.lr, constraint=">= 0")
        if not 0 <= self.momentum < 1:
            raise InvalidParameterError(
                name="momentum",
                value=self.momentum,
                constraint="в [0, 1)",
            )
        if self.lambda_k < 0:
            raise InvalidParameterError(
                name="lambda_k",
                value=self.lambda_k,
                constraint=">= 0",
            )
        validate_open_unit("ema_decay", self.ema_decay)

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data["loss_kind"] = TaskLossKind(self.loss_kind).value
        return data


class LabeledSet(NamedTuple):
    images: Tensor  # [N, H, W]
    categories: np.ndarray  # [N]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    task_loss: float
    filter_loss: float
    train_acc: float
    lam: float

    def to_json(self) -> str:
        values = (
            self.epoch,
            self.task_loss,
            self.filter_loss,
            self.train_acc,
            self.lam,
        )
        return json.dumps(dict(zip(EPOCH_LOG_KEYS, values)))


@dataclass(eq=False)
class TrainResult:
    net: Network
    states: Dict[int, List[FilterState]]
    log: List[EpochRecord] = field(default_factory=list)


EpochCallback = Callable[[int, Network, Dict[int, List[FilterState]]], None]


def _check_dataset(dataset: LabeledSet, net: Network) -> None:
    if len(dataset.categories) == 0:
        raise EmptyInputError("обучающая выборка")
    if len(dataset.images) != len(dataset.categories):
        raise ShapeMismatchError(
            operation="train",
            expected=len(dataset.images),
            actual=len(dataset.categories),
        )


def mean_peaks(net: Network, images: Tensor) -> Dict[int, float]:
    """E_x max_ij x_ij по всем картам каждого сайта (проход без обучения)."""
    totals: Dict[int, List[Tensor]] = {index: [] for index in net.sites}
    for start in range(0, len(images), PROBE_BATCH):
        result = net.forward(images[start : start + PROBE_BATCH])
        for record in result.records:
            totals[record.site.conv_index].append(record.raw.max(axis=(2, 3)))
    return {
        index: float(np.concatenate(parts).mean()) for index, parts in totals.items()
    }


def lambda_schedule(k: float, epoch: int, peak_mean: float) -> float:
    """lambda_t = (k / t) * E_x max_ij x_ij."""
    return k / epoch * peak_mean


def _filter_loss_trend(log: Sequence[EpochRecord], window: int = 10) -> int:
    tail = [record.filter_loss for record in log[-window:]]
    return sum(1 for a, b in zip(tail, tail[1:]) if b <= a)


def train(
    net: Network,
    dataset: LabeledSet,
    config: TrainConfig,
    *,
    states: Dict[int, List[FilterState]] | None = None,
    on_epoch_end: EpochCallback | None = None,
) -> TrainResult:
    """Обучение по эпохам; c^ и lambda пересчитываются в конце каждой эпохи."""
    _check_dataset(dataset, net)
    images = np.asarray(dataset.images, dtype=np.float64)
    categories = np.asarray(dataset.categories, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    states = states if states is not None else net.new_states(config.ema_decay)
    optimizer = Optimizer(lr=config.lr, momentum=config.momentum)
    assigned = all(
        state.target_category is not None
        for site_states in states.values()
        for state in site_states
    )

    peaks = mean_peaks(net, images) if config.filter_loss else {}
    log: List[EpochRecord] = []
    logger.info(
        "Train start: samples=%d epochs=%d batch=%d lr=%s k=%s filter_loss=%s",
        len(categories),
        config.epochs,
        config.batch_size,
        config.lr,
        config.lambda_k,
        config.filter_loss,
    )
    for epoch in range(1, config.epochs + 1):
        lambdas = {
            index: lambda_schedule(config.lambda_k, epoch, peaks.get(index, 0.0))
            if config.filter_loss
            else 0.0
            for index in net.sites
        }
        order = rng.permutation(len(categories))
        tallies = {
            index: CategoryTally(site.filters, net.spec.num_categories)
            for index, site in net.sites.items()
        }
        epoch_peaks: Dict[int, List[Tensor]] = {index: [] for index in net.sites}
        loss_sum = filter_sum = 0.0
        correct = batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            batch_categories = categories[batch].tolist()
            metrics = backward_and_step(
                net,
                images[batch],
                batch_categories,
                optimizer,
                states,
                lam=lambdas,
                warmup=not assigned,
                workers=config.workers,
            )
            loss_sum += metrics.task_loss * metrics.count
            filter_sum += metrics.filter_loss
            correct += metrics.correct
            batches += 1
            for record in metrics.records:
                index = record.site.conv_index
                tallies[index].add(record.raw, batch_categories)
                epoch_peaks[index].append(record.raw.max(axis=(2, 3)))

        for index, tally in tallies.items():
            for filt, category in enumerate(tally.assign()):
                states[index][filt] = states[index][filt].with_category(category)
        assigned = True
        peaks = {
            index: float(np.concatenate(parts).mean())
            for index, parts in epoch_peaks.items()
        }

        record = EpochRecord(
            epoch=epoch,
            task_loss=loss_sum / len(order),
            filter_loss=filter_sum / batches,
            train_acc=correct / len(order),
            lam=float(np.mean(list(lambdas.values()))) if lambdas else 0.0,
        )
        log.append(record)
        logger.info("Epoch %s", record.to_json())
        if on_epoch_end is not None:
            on_epoch_end(epoch, net, states)

    logger.info(
        "Train finished: non-increasing filter-loss steps over last epochs=%d",
        _filter_loss_trend(log),
    )
    return TrainResult(net=net, states=states, log=log)


def evaluate_accuracy(net: Network, dataset: LabeledSet) -> float:
    """Доля верных argmax-предсказаний."""
    _check_dataset(dataset, net)
    correct = 0
    for start in range(0, len(dataset.categories), PROBE_BATCH):
        logits = net.forward(dataset.images[start : start + PROBE_BATCH]).logits
        labels = dataset.categories[start : start + PROBE_BATCH]
        correct += count_correct(logits, labels, net.spec.loss_kind)
    return correct / len(dataset.categories)
