"""Генератор синтетических сцен из геометрических частей."""

from partmask_hub.synthgen.config import GeneratorConfig
from partmask_hub.synthgen.generator import (
    SyntheticScene,
    generate,
    generate_negatives,
)

__all__ = ["GeneratorConfig", "SyntheticScene", "generate", "generate_negatives"]
