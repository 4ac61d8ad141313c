"""Детерминированная генерация сцен «объект из частей» с разметкой."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from partmask_hub.core.exceptions import InvalidParameterError
from partmask_hub.core.tensor import NEGATIVE_CATEGORY
from partmask_hub.core.utils import validate_int_at_least
from partmask_hub.synthgen.config import (
    MIN_ARCHETYPE_SEPARATION,
    Archetype,
    GeneratorConfig,
    PartSpec,
)
from partmask_hub.synthgen.glyphs import GLYPH_REGISTRY, get_glyph

PART_INTENSITY = 1.0
CLUTTER_PATCH = 3
CLUTTER_RANGE = (0.35, 0.8)
POSITIVE_STREAM = 0
NEGATIVE_STREAM = 1
MAX_PLACEMENT_ATTEMPTS = 1000

Box = Tuple[int, int, int, int]  # top, left, bottom, right (включительно)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Изображение 32x32 в [0, 1] с ориентирами и масками частей."""

    image: np.ndarray = field(repr=False)
    category: int
    landmarks: Tuple[Tuple[int, Tuple[int, int]], ...]
    part_masks: Tuple[np.ndarray, ...] = field(repr=False)
    object_box: Box

    @property
    def is_negative(self) -> bool:
        return self.category == NEGATIVE_CATEGORY

    @property
    def part_ids(self) -> Tuple[int, ...]:
        return tuple(part_id for part_id, _ in self.landmarks)


def _scene_rng(config: GeneratorConfig, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, stream, index])


def _bounding_box(masks: Sequence[np.ndarray]) -> Box:
    union = np.logical_or.reduce(masks)
    rows = np.flatnonzero(union.any(axis=1))
    cols = np.flatnonzero(union.any(axis=0))
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


def _background(config: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    shape = (config.image_size, config.image_size)
    image = rng.uniform(0.0, config.noise, size=shape)
    limit = config.image_size - CLUTTER_PATCH + 1
    for _ in range(config.clutter):
        top, left = rng.integers(0, limit, size=2)
        dots = rng.random((CLUTTER_PATCH, CLUTTER_PATCH)) < 0.5
        level = rng.uniform(*CLUTTER_RANGE)
        window = image[top : top + CLUTTER_PATCH, left : left + CLUTTER_PATCH]
        np.maximum(window, dots * level, out=window)
    return image


def _quantize(image: np.ndarray) -> np.ndarray:
    # значения кратны 1/255, чтобы архив PGM восстанавливал их без потерь
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def _render(
    config: GeneratorConfig,
    parts: Sequence[PartSpec],
    rng: np.random.Generator,
) -> Tuple[np.ndarray, List[np.ndarray]]:
    shape = (config.image_size, config.image_size)
    image = _background(config, rng)
    masks = [get_glyph(part.glyph).rasterize(part.center, shape) for part in parts]
    for mask in masks:
        image[mask] = PART_INTENSITY
    return _quantize(image), masks


def _shifted(archetype: Archetype, offset: Tuple[int, int]) -> Tuple[PartSpec, ...]:
    return tuple(
        PartSpec(part.glyph, (part.center[0] + offset[0], part.center[1] + offset[1]))
        for part in archetype.parts
    )


def generate_scene(
    config: GeneratorConfig,
    category: int,
    index: int,
) -> SyntheticScene:
    """Сцена номер index категории category (сид выводится из seed и index)."""
    if not 0 <= category < config.num_categories:
        raise InvalidParameterError(
            name="category",
            value=category,
            constraint=f"в [0, {config.num_categories})",
        )
    rng = _scene_rng(config, POSITIVE_STREAM, index)
    offset = tuple(int(v) for v in rng.integers(-config.jitter, config.jitter + 1, 2))
    parts = _shifted(config.categories[category], offset)
    image, masks = _render(config, parts, rng)
    landmarks = tuple(
        (part_id, part.center)
        for part_id, part in zip(config.part_ids(category), parts)
    )
    return SyntheticScene(
        image=image,
        category=category,
        landmarks=landmarks,
        part_masks=tuple(masks),
        object_box=_bounding_box(masks),
    )


def generate(config: GeneratorConfig, count: int) -> List[SyntheticScene]:
    """count сцен; категория сцены i равна i mod C.

    При config.negative каждая (C+1)-я сцена отрицательная.
    """
    count = validate_int_at_least("count", count, 1)
    period = config.num_categories + (1 if config.negative else 0)
    scenes = []
    for index in range(count):
        slot = index % period
        if slot == config.num_categories:
            scenes.append(generate_negative(config, index))
        else:
            scenes.append(generate_scene(config, slot, index))
    return scenes


# ------------------------------------------------------------------ negatives


def matches_archetype(
    parts: Sequence[PartSpec],
    archetype: Archetype,
    tolerance: float = MIN_ARCHETYPE_SEPARATION,
) -> bool:
    """Совпадает ли набор глифов с архетипом с точностью до общего сдвига."""
    if sorted(p.glyph for p in parts) != sorted(p.glyph for p in archetype.parts):
        return False
    shift = np.mean([p.center for p in parts], axis=0) - np.mean(
        [p.center for p in archetype.parts],
        axis=0,
    )
    for target in archetype.parts:
        expected = np.asarray(target.center) + shift
        if not any(
            p.glyph == target.glyph and math.dist(p.center, expected) < tolerance
            for p in parts
        ):
            return False
    return True


def _random_layout(
    config: GeneratorConfig,
    rng: np.random.Generator,
) -> Tuple[PartSpec, ...]:
    kinds = sorted(GLYPH_REGISTRY)
    count = int(rng.integers(3, 5))
    shape = (config.image_size, config.image_size)
    occupied = np.zeros(shape, dtype=bool)
    parts: List[PartSpec] = []
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        if len(parts) == count:
            break
        glyph = get_glyph(kinds[int(rng.integers(len(kinds)))])
        reach_rows, reach_cols = glyph.extent
        center = (
            int(rng.integers(reach_rows, config.image_size - reach_rows)),
            int(rng.integers(reach_cols, config.image_size - reach_cols)),
        )
        mask = glyph.rasterize(center, shape)
        grown = np.zeros_like(mask)
        grown[:-1] |= mask[1:]
        grown[1:] |= mask[:-1]
        grown[:, :-1] |= mask[:, 1:]
        grown[:, 1:] |= mask[:, :-1]
        if np.any((mask | grown) & occupied):
            continue
        occupied |= mask
        parts.append(PartSpec(glyph.kind, center))
    return tuple(parts)


def generate_negative(config: GeneratorConfig, index: int) -> SyntheticScene:
    """Сцена без согласованного архетипа: случайные глифы и помехи."""
    rng = _scene_rng(config, NEGATIVE_STREAM, index)
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        parts = _random_layout(config, rng)
        if len(parts) >= 3 and not any(
            matches_archetype(parts, archetype) for archetype in config.categories
        ):
            break
    else:
        raise InvalidParameterError(
            name="negative",
            value=index,
            constraint="удалось разместить глифы без совпадения с архетипом",
        )
    image, masks = _render(config, parts, rng)
    return SyntheticScene(
        image=image,
        category=NEGATIVE_CATEGORY,
        landmarks=(),
        part_masks=(),
        object_box=_bounding_box(masks),
    )


def generate_negatives(config: GeneratorConfig, count: int) -> List[SyntheticScene]:
    """count отрицательных сцен."""
    count = validate_int_at_least("count", count, 1)
    return [generate_negative(config, index) for index in range(count)]
