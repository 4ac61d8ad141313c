"""Геометрические глифы частей и их растеризация на пиксельной сетке.

Пиксель [r, c] принадлежит глифу с центром (cr, cc), если его координаты
удовлетворяют неравенствам глифа; центр всегда лежит внутри маски.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Dict, Tuple

import numpy as np

from partmask_hub.core.exceptions import InvalidParameterError

Point = Tuple[int, int]


class Glyph(ABC):
    """Базовый класс глифа фиксированного размера."""

    def __init__(self, kind: str, size: int) -> None:
        if size < 1:
            raise InvalidParameterError(name="size", value=size, constraint=">= 1")
        self._kind = kind
        self._size = int(size)

    @property
    def kind(self) -> str:
        return self._kind

    @property
    def size(self) -> int:
        return self._size

    @property
    def extent(self) -> Tuple[int, int]:
        """Полуразмах по строкам и столбцам относительно центра."""
        return self._size, self._size

    @abstractmethod
    def _inside(self, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
        """Булева маска по смещениям от центра."""

    def rasterize(self, center: Point, shape: Tuple[int, int]) -> np.ndarray:
        rows, cols = np.indices(shape)
        return self._inside(rows - center[0], cols - center[1])


class Disk(Glyph):
    def __init__(self, size: int = 3) -> None:
        super().__init__("disk", size)

    def _inside(self, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
        return dy * dy + dx * dx <= self.size * self.size


class Ring(Glyph):
    """Кольцо со ступицей: ступица держит центр внутри маски."""

    def __init__(self, size: int = 4) -> None:
        super().__init__("ring", size)

    def _inside(self, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
        squared = dy * dy + dx * dx
        inner = (self.size / 2) ** 2
        return (squared <= 1) | ((squared > inner) & (squared <= self.size**2))


class Triangle(Glyph):
    """Равнобедренный треугольник вершиной вверх."""

    def __init__(self, size: int = 3) -> None:
        super().__init__("triangle", size)

    def _inside(self, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
        within_rows = np.abs(dy) <= self.size
        return within_rows & (2 * np.abs(dx) <= dy + self.size)


class Bar(Glyph):
    """Горизонтальная полоса толщиной 3 пикселя."""

    THICKNESS = 1

    def __init__(self, size: int = 4) -> None:
        super().__init__("bar", size)

    @property
    def extent(self) -> Tuple[int, int]:
        return self.THICKNESS, self.size

    def _inside(self, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
        return (np.abs(dy) <= self.THICKNESS) & (np.abs(dx) <= self.size)


GLYPH_REGISTRY: Dict[str, Glyph] = {
    "disk": Disk(),
    "ring": Ring(),
    "triangle": Triangle(),
    "bar": Bar(),
}


def get_glyph(kind: str) -> Glyph:
    """Возвращает глиф из реестра или вызывает InvalidParameterError."""
    normalized = (kind or "").strip().lower()
    try:
        return GLYPH_REGISTRY[normalized]
    except KeyError as exc:
        raise InvalidParameterError(
            name="glyph",
            value=kind,
            constraint=f"один из {sorted(GLYPH_REGISTRY)}",
        ) from exc
