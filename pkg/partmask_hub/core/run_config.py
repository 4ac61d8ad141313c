"""Конфигурация запуска: флаги > файл --config > [tool.partmask] > значения классов."""

from __future__ import annotations

import tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping

from partmask_hub.core.exceptions import InvalidParameterError
from partmask_hub.core.network import LayerConfig
from partmask_hub.core.tensor import TaskLossKind
from partmask_hub.core.trainer import TrainConfig
from partmask_hub.infra.settings import settings
from partmask_hub.synthgen.config import GeneratorConfig

CONFIG_SECTIONS = ("train", "generator", "layer")
EFFECTIVE_CONFIG_NAME = "effective_config.json"

VARIANT_INTERPRETABLE = "interpretable"
VARIANT_NO_FILTER_LOSS = "no-filter-loss"
VARIANT_ORDINARY = "ordinary"


@dataclass(frozen=True)
class RunConfig:
    """Итоговые параметры одной команды CLI (пишутся в effective_config.json)."""

    command: str
    paths: Dict[str, str] = field(default_factory=dict)
    train: TrainConfig | None = None
    generator: GeneratorConfig | None = None
    layer: LayerConfig | None = None
    variant: str | None = None
    interp_layers: int = 1
    verbose: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "paths": dict(self.paths),
            "train": None if self.train is None else self.train.to_dict(),
            "generator": None if self.generator is None else self.generator.to_dict(),
            "layer": None
            if self.layer is None
            else {f.name: getattr(self.layer, f.name) for f in fields(self.layer)},
            "variant": self.variant,
            "interp_layers": self.interp_layers,
            "verbose": self.verbose,
        }


def read_config_file(path: Path | str | None) -> Dict[str, Dict[str, Any]]:
    """Прочитать TOML с таблицами [train], [generator], [layer]."""
    if path is None:
        return {}
    path = Path(path)
    with path.open("rb") as file:
        data = tomllib.load(file)
    unknown = sorted(set(data) - set(CONFIG_SECTIONS))
    if unknown:
        raise InvalidParameterError(
            name="config",
            value=unknown,
            constraint=f"только секции {CONFIG_SECTIONS}",
        )
    return {name: dict(data.get(name, {})) for name in CONFIG_SECTIONS}


def _merged(
    cls: type,
    section: str,
    *sources: Mapping[str, Any],
) -> Dict[str, Any]:
    """Слияние источников по возрастанию приоритета; None не перекрывает."""
    names = {f.name for f in fields(cls)}
    values: Dict[str, Any] = {}
    for source in sources:
        unknown = sorted(set(source) - names)
        if unknown:
            raise InvalidParameterError(
                name=section,
                value=unknown,
                constraint=f"ключи из {sorted(names)}",
            )
        values.update({k: v for k, v in source.items() if v is not None})
    return values


def _tool_train_defaults() -> Dict[str, Any]:
    return {
        "seed": settings.get("DEFAULT_SEED"),
        "epochs": settings.get("DEFAULT_EPOCHS"),
        "batch_size": settings.get("DEFAULT_BATCH_SIZE"),
        "lr": settings.get("DEFAULT_LR"),
        "momentum": settings.get("DEFAULT_MOMENTUM"),
        "ema_decay": settings.get("EMA_DECAY"),
        "workers": settings.worker_count(),
    }


def build_train_config(
    flags: Mapping[str, Any],
    file_config: Mapping[str, Mapping[str, Any]],
) -> TrainConfig:
    values = _merged(
        TrainConfig,
        "train",
        _tool_train_defaults(),
        file_config.get("train", {}),
        flags,
    )
    if "loss_kind" in values:
        values["loss_kind"] = TaskLossKind(values["loss_kind"])
    return TrainConfig(**values)


def build_generator_config(
    flags: Mapping[str, Any],
    file_config: Mapping[str, Mapping[str, Any]],
) -> GeneratorConfig:
    values = _merged(
        GeneratorConfig,
        "generator",
        {"seed": settings.get("DEFAULT_SEED")},
        file_config.get("generator", {}),
        flags,
    )
    return GeneratorConfig.from_dict(values)


def build_layer_config(
    flags: Mapping[str, Any],
    file_config: Mapping[str, Mapping[str, Any]],
) -> LayerConfig:
    values = _merged(LayerConfig, "layer", file_config.get("layer", {}), flags)
    return LayerConfig(**values)


def resolve_variant(*, no_mask: bool, no_filter_loss: bool) -> str:
    if no_mask:
        return VARIANT_ORDINARY
    if no_filter_loss:
        return VARIANT_NO_FILTER_LOSS
    return VARIANT_INTERPRETABLE
