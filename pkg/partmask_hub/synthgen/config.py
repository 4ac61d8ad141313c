"""Конфигурация генератора синтетических сцен и архетипы категорий."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Any, Dict, Mapping, Tuple

from partmask_hub.core.exceptions import InvalidParameterError
from partmask_hub.core.utils import validate_int_at_least
from partmask_hub.synthgen.glyphs import get_glyph

MIN_ARCHETYPE_SEPARATION = 6.0


@dataclass(frozen=True)
class PartSpec:
    glyph: str
    center: Tuple[int, int]

    def __post_init__(self) -> None:
        get_glyph(self.glyph)


@dataclass(frozen=True)
class Archetype:
    """Расположение 3–4 частей одной категории (центр объекта в кадре 32x32)."""

    name: str
    parts: Tuple[PartSpec, ...]

    def __post_init__(self) -> None:
        if not 3 <= len(self.parts) <= 4:
            raise InvalidParameterError(
                name=f"archetype {self.name}",
                value=len(self.parts),
                constraint="от 3 до 4 частей",
            )


def _parts(*items: Tuple[str, int, int]) -> Tuple[PartSpec, ...]:
    return tuple(PartSpec(glyph, (row, col)) for glyph, row, col in items)


DEFAULT_ARCHETYPES: Tuple[Archetype, ...] = (
    Archetype("a0", _parts(("disk", 9, 10), ("triangle", 9, 22), ("bar", 22, 16))),
    Archetype("a1", _parts(("disk", 22, 10), ("triangle", 22, 22), ("bar", 9, 16))),
    Archetype("a2", _parts(("ring", 10, 16), ("disk", 22, 9), ("triangle", 22, 23))),
    Archetype(
        "a3",
        _parts(("disk", 8, 22), ("triangle", 8, 9), ("ring", 21, 21), ("bar", 22, 8)),
    ),
    Archetype("a4", _parts(("disk", 16, 9), ("ring", 9, 22), ("bar", 23, 22))),
    Archetype("a5", _parts(("triangle", 16, 23), ("disk", 8, 10), ("ring", 22, 10))),
)


def archetypes_distinguishable(first: Archetype, second: Archetype) -> bool:
    """Хотя бы одна часть (по порядку) смещена не меньше чем на 6 px."""
    return any(
        math.dist(a.center, b.center) >= MIN_ARCHETYPE_SEPARATION
        for a, b in zip(first.parts, second.parts)
    )


@dataclass(frozen=True)
class GeneratorConfig:
    """Параметры генерации: сдвиг объекта целиком в [-jitter, jitter]."""

    seed: int = 7
    categories: Tuple[Archetype, ...] = field(default=DEFAULT_ARCHETYPES)
    jitter: int = 3
    clutter: int = 2
    negative: bool = False
    image_size: int = 32
    noise: float = 0.08

    def __post_init__(self) -> None:
        validate_int_at_least("seed", self.seed, 0)
        validate_int_at_least("jitter", self.jitter, 0)
        validate_int_at_least("clutter", self.clutter, 0)
        validate_int_at_least("image_size", self.image_size, 8)
        validate_int_at_least("categories", len(self.categories), 2)
        if not 0 <= self.noise < 0.5:
            raise InvalidParameterError(
                name="noise",
                value=self.noise,
                constraint="в [0, 0.5)",
            )
        for archetype in self.categories:
            for part in archetype.parts:
                self._check_in_frame(archetype, part)
        for first, second in combinations(self.categories, 2):
            if not archetypes_distinguishable(first, second):
                raise InvalidParameterError(
                    name="categories",
                    value=(first.name, second.name),
                    constraint="части архетипов различаются хотя бы на 6 px",
                )

    def _check_in_frame(self, archetype: Archetype, part: PartSpec) -> None:
        reach_rows, reach_cols = get_glyph(part.glyph).extent
        row, col = part.center
        last = self.image_size - 1
        if (
            row - reach_rows - self.jitter < 0
            or col - reach_cols - self.jitter < 0
            or row + reach_rows + self.jitter > last
            or col + reach_cols + self.jitter > last
        ):
            raise InvalidParameterError(
                name="jitter",
                value=self.jitter,
                constraint=f"объект {archetype.name} остаётся в кадре",
            )

    @property
    def num_categories(self) -> int:
        return len(self.categories)

    def part_ids(self, category: int) -> Tuple[int, ...]:
        """Сквозные идентификаторы частей категории."""
        offset = sum(len(a.parts) for a in self.categories[:category])
        return tuple(range(offset, offset + len(self.categories[category].parts)))

    def part_category(self) -> Dict[int, int]:
        """Идентификатор части → категория."""
        return {
            part_id: category
            for category in range(self.num_categories)
            for part_id in self.part_ids(category)
        }

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["categories"] = [
            {
                "name": archetype.name,
                "parts": [
                    {"glyph": part.glyph, "center": list(part.center)}
                    for part in archetype.parts
                ],
            }
            for archetype in self.categories
        ]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GeneratorConfig":
        values = dict(data)
        if "categories" in values:
            values["categories"] = tuple(
                Archetype(
                    name=str(item["name"]),
                    parts=tuple(
                        PartSpec(str(part["glyph"]), tuple(part["center"]))
                        for part in item["parts"]
                    ),
                )
                for item in values["categories"]
            )
        return cls(**values)
