"""Общие помощники тестов: конечные разности, сцены вручную, малые сети."""

from __future__ import annotations

import math
from typing import Callable, Sequence, Tuple

import numpy as np

from partmask_hub.core.network import ArchitectureSpec, LayerSpec
from partmask_hub.core.tensor import TaskLossKind
from partmask_hub.synthgen.generator import SyntheticScene


def central_difference(
    func: Callable[[np.ndarray], float],
    x: np.ndarray,
    step: float = 1e-6,
) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for position in np.ndindex(x.shape):
        saved = x[position]
        x[position] = saved + step
        plus = func(x)
        x[position] = saved - step
        minus = func(x)
        x[position] = saved
        grad[position] = (plus - minus) / (2 * step)
    return grad


def max_relative_error(first: np.ndarray, second: np.ndarray) -> float:
    scale = max(np.max(np.abs(first)), np.max(np.abs(second)), 1e-300)
    return float(np.max(np.abs(first - second)) / scale)


def square_mask(size: int, top: int, left: int, side: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    mask[top : top + side, left : left + side] = True
    return mask


def make_scene(
    category: int,
    parts: Sequence[Tuple[int, Tuple[int, int], np.ndarray]],
    size: int = 32,
) -> SyntheticScene:
    """Сцена по списку (part_id, (row, col), mask) с пустым изображением."""
    masks = tuple(mask for _, _, mask in parts)
    return SyntheticScene(
        image=np.zeros((size, size)),
        category=category,
        landmarks=tuple((part_id, center) for part_id, center, _ in parts),
        part_masks=masks,
        object_box=(0, 0, size - 1, size - 1),
    )


def tiny_architecture(
    num_categories: int = 3,
    loss_kind: TaskLossKind = TaskLossKind.SOFTMAX,
    *,
    mask: bool = True,
) -> ArchitectureSpec:
    """conv4-relu-pool-pool-interp4-relu-mask-fc на входе 32x32 (n = 6)."""
    layers = [
        LayerSpec("conv", filters=4, kernel=3, pad=1),
        LayerSpec("relu"),
        LayerSpec("pool", window=2, stride=2),
        LayerSpec("pool", window=2, stride=2),
    ]
    if mask:
        layers += [
            LayerSpec("interp_conv", filters=4, kernel=3),
            LayerSpec("relu"),
            LayerSpec("mask"),
        ]
    else:
        layers += [
            LayerSpec("conv", filters=4, kernel=3, record=True),
            LayerSpec("relu"),
        ]
    layers.append(LayerSpec("fc"))
    return ArchitectureSpec(
        layers=tuple(layers),
        num_categories=num_categories,
        loss_kind=loss_kind,
    )


# ------------------------------------------------------------ metric oracles


def oracle_instability(
    maps: np.ndarray,
    scenes: Sequence[SyntheticScene],
    chosen: Sequence[int],
) -> float:
    """Прямой пересчёт по формуле: пики, расстояния, популяционная дисперсия."""
    height, width = scenes[0].image.shape
    n = maps.shape[-1]
    diagonal = math.sqrt(height**2 + width**2)
    per_part = {}
    for index in chosen:
        flat = int(np.argmax(maps[index]))
        i, j = divmod(flat, n)
        peak = ((i + 0.5) * height / n, (j + 0.5) * width / n)
        for part_id, (row, col) in scenes[index].landmarks:
            distance = math.hypot(row + 0.5 - peak[0], col + 0.5 - peak[1])
            per_part.setdefault(part_id, []).append(distance / diagonal)
    stds = []
    for values in per_part.values():
        if len(values) < 2:
            continue
        mean = sum(values) / len(values)
        stds.append(math.sqrt(sum((v - mean) ** 2 for v in values) / len(values)))
    return sum(stds) / len(stds)


def oracle_purity(maps: np.ndarray, mu_indices: np.ndarray, stack: np.ndarray) -> float:
    inside = total = 0.0
    for index in np.ndindex(mu_indices.shape):
        template = stack[int(mu_indices[index])]
        for cell in np.ndindex(template.shape):
            value = max(float(maps[index][cell]), 0.0)
            total += value
            if template[cell] > 0:
                inside += value
    return 1.0 if total == 0 else inside / total


def oracle_threshold_accuracy(
    peaks: Sequence[float],
    labels: Sequence[bool],
) -> Tuple[float, float]:
    best = (-1.0, math.inf)
    for threshold in sorted(set(peaks)) + [math.inf]:
        correct = sum((p >= threshold) == bool(t) for p, t in zip(peaks, labels))
        accuracy = correct / len(peaks)
        if accuracy > best[0]:
            best = (accuracy, threshold)
    return best
