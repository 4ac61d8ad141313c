"""Метрики интерпретируемости фильтров по разметке синтетических сцен.

Соглашения:
- ячейка [i, j] карты n x n на изображении H x W проецируется в центр
  ((i + 0.5) * H / n, (j + 0.5) * W / n); пиксель [r, c] имеет центр
  (r + 0.5, c + 0.5);
- дисперсия в location instability популяционная (деление на число);
- оценка вывода для отбора top-m изображений: пик max_ij x_ij.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from partmask_hub.core.exceptions import (
    EmptyInputError,
    InvalidParameterError,
    ShapeMismatchError,
)
from partmask_hub.core.templates import TemplateBank
from partmask_hub.core.tensor import Tensor
from partmask_hub.logging_config import train_child_logger
from partmask_hub.synthgen.generator import SyntheticScene

logger = train_child_logger("metrics")

TOP_FRACTION = 0.005
IOU_THRESHOLD = 0.2
DEFAULT_TOP_M = 100
INFERENCE_SCORE = "peak"
VARIANCE_CONVENTION = "population"


def _map_stack(maps: Sequence[Tensor] | Tensor) -> Tensor:
    array = np.asarray(maps, dtype=np.float64)
    if array.ndim != 3 or array.shape[0] == 0:
        raise EmptyInputError("карты признаков фильтра [N, n, n]")
    if array.shape[1] != array.shape[2]:
        raise ShapeMismatchError(
            operation="metrics",
            expected="квадратные карты n x n",
            actual=array.shape,
        )
    return array


def _check_aligned(maps: Tensor, scenes: Sequence[SyntheticScene]) -> None:
    if len(scenes) != maps.shape[0]:
        raise ShapeMismatchError(
            operation="metrics",
            expected=f"{maps.shape[0]} сцен",
            actual=len(scenes),
        )


def cell_centers(n: int, height: int, width: int) -> Tensor:
    """Центры ячеек в координатах изображения, [n * n, 2] (row, col)."""
    rows, cols = np.indices((n, n)).reshape(2, -1)
    return np.stack([(rows + 0.5) * height / n, (cols + 0.5) * width / n], axis=1)


def activation_threshold(maps: Sequence[Tensor] | Tensor) -> float:
    """T_f: наименьшее v, при котором доля значений > v не превышает 0.005."""
    values = np.sort(_map_stack(maps).reshape(-1))
    total = values.size
    greater = total - np.searchsorted(values, values, side="right")
    allowed = greater <= TOP_FRACTION * total + 1e-9
    return float(values[int(np.argmax(allowed))])


# ------------------------------------------------------- part interpretability


@dataclass(frozen=True)
class PartInterpretability:
    p_f: float
    per_part: Dict[int, float] = field(default_factory=dict)


def receptive_regions(
    maps: Tensor,
    threshold: float,
    image_shape: Tuple[int, int],
    rf_radius: float,
) -> np.ndarray:
    """Объединение круглых RF вокруг ячеек с x_ij > T_f: [N, H, W] bool."""
    n = maps.shape[-1]
    height, width = image_shape
    centers = cell_centers(n, height, width)
    rows, cols = np.indices(image_shape) + 0.5
    squared = (rows[np.newaxis] - centers[:, 0, None, None]) ** 2 + (
        cols[np.newaxis] - centers[:, 1, None, None]
    ) ** 2
    disks = (squared <= rf_radius * rf_radius).reshape(n * n, -1)
    valid = maps.reshape(maps.shape[0], -1) > threshold
    covered = valid.astype(np.int64) @ disks.astype(np.int64)
    return (covered > 0).reshape(maps.shape[0], height, width)


def iou(first: np.ndarray, second: np.ndarray) -> float:
    union = np.count_nonzero(first | second)
    if union == 0:
        return 0.0
    return np.count_nonzero(first & second) / union


def part_interpretability(
    maps: Sequence[Tensor] | Tensor,
    scenes: Sequence[SyntheticScene],
    rf_radius: float | None = None,
    threshold: float | None = None,
) -> PartInterpretability:
    """P_{f,k} = доля изображений с частью k, где IoU(S_f, S_k) > 0.2."""
    array = _map_stack(maps)
    _check_aligned(array, scenes)
    height, width = scenes[0].image.shape
    n = array.shape[-1]
    radius = height / (2 * n) if rf_radius is None else rf_radius
    if radius <= 0:
        raise InvalidParameterError(name="rf_radius", value=radius, constraint="> 0")
    threshold = activation_threshold(array) if threshold is None else threshold
    regions = receptive_regions(array, threshold, (height, width), radius)

    hits: Dict[int, List[float]] = {}
    for region, scene in zip(regions, scenes):
        for (part_id, _), mask in zip(scene.landmarks, scene.part_masks):
            overlap = iou(region, mask) > IOU_THRESHOLD
            hits.setdefault(part_id, []).append(float(overlap))
    per_part = {part_id: float(np.mean(v)) for part_id, v in sorted(hits.items())}
    p_f = max(per_part.values()) if per_part else 0.0
    return PartInterpretability(p_f=p_f, per_part=per_part)


# --------------------------------------------------------- location instability


@dataclass(frozen=True)
class InstabilityResult:
    """Среднее D_{f,k} по ориентирам; None, если ни один не пригоден."""

    value: float | None
    per_part: Dict[int, float] = field(default_factory=dict)
    excluded: Tuple[int, ...] = ()


def peak_locations(maps: Tensor, image_shape: Tuple[int, int]) -> Tensor:
    """p(mu^) для каждой карты: центр ячейки argmax, [N, 2]."""
    n = maps.shape[-1]
    flat = np.argmax(maps.reshape(maps.shape[0], -1), axis=1)
    return cell_centers(n, *image_shape)[flat]


def location_instability(
    maps: Sequence[Tensor] | Tensor,
    scenes: Sequence[SyntheticScene],
    top_m: int = DEFAULT_TOP_M,
    *,
    scores: Sequence[float] | None = None,
    category: int | None = None,
) -> InstabilityResult:
    """E_k D_{f,k}, D_{f,k} = sqrt(var_I ||p_k - p(mu^)|| / sqrt(H^2 + W^2)).

    category ограничивает изображения и ориентиры одной категорией.
    """
    array = _map_stack(maps)
    _check_aligned(array, scenes)
    if top_m < 1:
        raise InvalidParameterError(name="top_m", value=top_m, constraint=">= 1")
    candidates = np.array(
        [
            index
            for index, scene in enumerate(scenes)
            if scene.landmarks and (category is None or scene.category == category)
        ],
        dtype=np.int64,
    )
    if candidates.size == 0:
        logger.warning("Instability: no images with landmarks (category=%s)", category)
        return InstabilityResult(value=None)

    if scores is None:
        ranking = array[candidates].max(axis=(1, 2))
    else:
        ranking = np.asarray(scores, dtype=np.float64)[candidates]
    order = np.argsort(-ranking, kind="stable")
    chosen = candidates[order[: min(top_m, candidates.size)]]

    height, width = scenes[0].image.shape
    diagonal = math.hypot(height, width)
    peaks = peak_locations(array[chosen], (height, width))
    distances: Dict[int, List[float]] = {}
    for peak, index in zip(peaks, chosen):
        for part_id, (row, col) in scenes[index].landmarks:
            landmark = (row + 0.5, col + 0.5)
            distances.setdefault(part_id, []).append(
                math.dist(landmark, tuple(peak)) / diagonal,
            )

    per_part: Dict[int, float] = {}
    excluded: List[int] = []
    for part_id, values in sorted(distances.items()):
        if len(values) < 2:
            excluded.append(part_id)
            logger.warning(
                "Instability: landmark %d excluded, %d usable image(s)",
                part_id,
                len(values),
            )
            continue
        per_part[part_id] = float(np.sqrt(np.var(values)))
    value = float(np.mean(list(per_part.values()))) if per_part else None
    return InstabilityResult(value=value, per_part=per_part, excluded=tuple(excluded))


def baseline_instability(
    maps: Sequence[Tensor] | Tensor,
    scenes: Sequence[SyntheticScene],
    top_m: int = DEFAULT_TOP_M,
    *,
    scores: Sequence[float] | None = None,
) -> InstabilityResult:
    """min_c E_{k in Part_c} D_{f,k} для фильтра без целевой категории."""
    categories = sorted({s.category for s in scenes if s.landmarks})
    best = InstabilityResult(value=None)
    for category in categories:
        result = location_instability(
            maps,
            scenes,
            top_m,
            scores=scores,
            category=category,
        )
        if result.value is None:
            continue
        if best.value is None or result.value < best.value:
            best = result
    return best


# ----------------------------------------------------------------- purity


def semantic_purity(
    maps: Sequence[Tensor] | Tensor,
    mu_indices: Sequence[int] | np.ndarray,
    bank: TemplateBank,
) -> float:
    """Доля положительной массы внутри области T_mu^ > 0; 1 при нулевой массе."""
    array = np.asarray(maps, dtype=np.float64)
    indices = np.asarray(mu_indices, dtype=np.int64)
    if array.shape[:-2] != indices.shape or array.shape[-2:] != (bank.n, bank.n):
        raise ShapeMismatchError(
            operation="semantic_purity",
            expected=f"{indices.shape} + ({bank.n}, {bank.n})",
            actual=array.shape,
        )
    positive = np.maximum(array, 0.0)
    total = float(positive.sum())
    if total == 0.0:
        logger.info("Purity: zero activation mass, defined as 1")
        return 1.0
    inside = bank.stack[indices] > 0
    return float(np.sum(positive * inside)) / total


# ------------------------------------------------------- activation statistics


@dataclass(frozen=True)
class ActivationStats:
    target_mean: float | None
    other_mean: float | None


def activation_stats(
    maps: Sequence[Tensor] | Tensor,
    categories: Sequence[int],
    target: int,
) -> ActivationStats:
    """Средний пик max_ij x_ij на изображениях целевой и прочих категорий."""
    array = _map_stack(maps)
    labels = np.asarray(categories)
    if labels.shape != (array.shape[0],):
        raise ShapeMismatchError(
            operation="activation_stats",
            expected=(array.shape[0],),
            actual=labels.shape,
        )
    peaks = array.max(axis=(1, 2))
    on_target = labels == target
    target_mean = float(peaks[on_target].mean()) if on_target.any() else None
    other_mean = float(peaks[~on_target].mean()) if (~on_target).any() else None
    return ActivationStats(target_mean=target_mean, other_mean=other_mean)


# ------------------------------------------------------ single-filter accuracy


@dataclass(frozen=True)
class ThresholdAccuracy:
    accuracy: float
    threshold: float


def single_filter_accuracy(
    peaks: Sequence[float],
    labels: Sequence[bool],
) -> ThresholdAccuracy:
    """Лучшая точность правила «пик >= t → положительный класс».

    Пороги перебираются по наблюдённым пикам плюс +inf (все отрицательные);
    при равенстве точностей выбирается меньший порог.
    """
    values = np.asarray(peaks, dtype=np.float64)
    truth = np.asarray(labels, dtype=bool)
    if values.shape != truth.shape or values.ndim != 1:
        raise ShapeMismatchError(
            operation="single_filter_accuracy",
            expected=values.shape,
            actual=truth.shape,
        )
    if truth.all() or not truth.any():
        raise InvalidParameterError(
            name="labels",
            value=int(truth.sum()),
            constraint="присутствуют оба класса",
        )
    thresholds = np.append(np.unique(values), np.inf)
    predicted = values[np.newaxis, :] >= thresholds[:, np.newaxis]
    accuracy = (predicted == truth[np.newaxis, :]).mean(axis=1)
    best = int(np.argmax(accuracy))
    return ThresholdAccuracy(
        accuracy=float(accuracy[best]),
        threshold=float(thresholds[best]),
    )
