"""Сценарии команд partmask-hub: генерация, обучение, оценка, проверка, визуализация."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from partmask_hub.core.exceptions import EmptyInputError, ShapeMismatchError
from partmask_hub.core.filter_loss import FilterState
from partmask_hub.core.network import Network, default_architecture
from partmask_hub.core.run_config import EFFECTIVE_CONFIG_NAME, RunConfig
from partmask_hub.core.trainer import LabeledSet, train
from partmask_hub.core.verification import GradientHook, run_verification
from partmask_hub.decorators import log_action
from partmask_hub.evaluation.report import evaluate_network, write_reports
from partmask_hub.evaluation.visualize import export_views
from partmask_hub.infra.archive import load_archive, save_archive
from partmask_hub.infra.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from partmask_hub.synthgen.generator import SyntheticScene, generate

CHECKPOINT_NAME = "checkpoint.gbx"
TRAIN_LOG_NAME = "train_log.jsonl"


def _extract_value(args: tuple, kwargs: dict, key: str, index: int) -> Any:
    """Возвращает значение аргумента из kwargs или args."""
    if key in kwargs:
        return kwargs[key]
    if len(args) > index:
        return args[index]
    return None


def _run_context(
    args: tuple,
    kwargs: dict,
    result: Optional[Dict[str, Any]],
    verbose: bool,
) -> Dict[str, Any]:
    """Контекст лога: пути запуска и краткий итог."""
    run: RunConfig | None = _extract_value(args, kwargs, "run", 0)
    context: Dict[str, Any] = {}
    if run is not None:
        context.update(run.paths)
        if run.variant:
            context["variant"] = run.variant
    if result:
        for key in ("count", "epochs", "accuracy", "passed", "written"):
            if key in result:
                context[key] = result[key]
    return context


def write_effective_config(run: RunConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / EFFECTIVE_CONFIG_NAME
    path.write_text(
        json.dumps(run.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return path


def scenes_to_dataset(scenes: Sequence[SyntheticScene]) -> LabeledSet:
    if not scenes:
        raise EmptyInputError("архив сцен")
    return LabeledSet(
        images=np.stack([scene.image for scene in scenes]),
        categories=np.array([scene.category for scene in scenes], dtype=np.int64),
    )


def _num_categories(scenes: Sequence[SyntheticScene]) -> int:
    return max(scene.category for scene in scenes) + 1


def _check_compatible(net: Network, scenes: Sequence[SyntheticScene]) -> None:
    needed = _num_categories(scenes)
    if needed > net.spec.num_categories:
        raise ShapeMismatchError(
            operation="archive vs checkpoint",
            expected=f"категории < {net.spec.num_categories}",
            actual=needed - 1,
        )


@log_action("GEN", context_getter=_run_context)
def generate_archive(run: RunConfig, count: int) -> Dict[str, Any]:
    out_dir = Path(run.paths["out"])
    scenes = generate(run.generator, count)
    index_path = save_archive(out_dir, scenes)
    write_effective_config(run, out_dir)
    negatives = sum(1 for scene in scenes if scene.is_negative)
    return {
        "count": len(scenes),
        "negatives": negatives,
        "categories": run.generator.num_categories,
        "index": index_path,
    }


@log_action("TRAIN", context_getter=_run_context)
def train_network(run: RunConfig) -> Dict[str, Any]:
    scenes = load_archive(run.paths["archive"])
    out_dir = Path(run.paths["out"])
    dataset = scenes_to_dataset(scenes)
    config = run.train
    spec = default_architecture(
        _num_categories(scenes),
        config.loss_kind,
        mask=run.variant != "ordinary",
        interp_layers=run.interp_layers,
        layer_config=run.layer,
    )
    net = Network.initialize(spec, config.seed)
    write_effective_config(run, out_dir)
    checkpoint_path = out_dir / CHECKPOINT_NAME
    meta = {"variant": run.variant, "train": config.to_dict()}

    def save(
        epoch: int,
        current: Network,
        states: Dict[int, List[FilterState]],
    ) -> None:
        save_checkpoint(checkpoint_path, current, states, epoch=epoch, meta=meta)

    result = train(net, dataset, config, on_epoch_end=save)
    log_path = out_dir / TRAIN_LOG_NAME
    log_path.write_text(
        "".join(record.to_json() + "\n" for record in result.log),
        encoding="utf-8",
    )
    last = result.log[-1]
    return {
        "checkpoint": checkpoint_path,
        "log": log_path,
        "records": result.log,
        "epochs": len(result.log),
        "task_loss": last.task_loss,
        "filter_loss": last.filter_loss,
        "accuracy": last.train_acc,
    }


def _load(run: RunConfig) -> tuple[Checkpoint, List[SyntheticScene]]:
    checkpoint = load_checkpoint(run.paths["checkpoint"])
    scenes = load_archive(run.paths["archive"])
    _check_compatible(checkpoint.net, scenes)
    return checkpoint, scenes


@log_action("EVAL", context_getter=_run_context)
def evaluate_checkpoint(
    run: RunConfig,
    *,
    top_m: int,
    rf_radius: float | None = None,
) -> Dict[str, Any]:
    checkpoint, scenes = _load(run)
    out_dir = Path(run.paths["out"])
    variant = str(checkpoint.meta.get("variant") or Path(run.paths["checkpoint"]).stem)
    report = evaluate_network(
        checkpoint.net,
        checkpoint.states,
        scenes,
        top_m=top_m,
        rf_radius=rf_radius,
        variant=variant,
    )
    tsv_path, json_path = write_reports(report, out_dir)
    write_effective_config(run, out_dir)
    return {
        "report": report,
        "variant": variant,
        "tsv": tsv_path,
        "json": json_path,
        "accuracy": report.accuracy,
    }


@log_action("COMPARE", context_getter=_run_context)
def compare_checkpoints(
    run: RunConfig,
    checkpoints: Sequence[str],
    *,
    top_m: int,
    rf_radius: float | None = None,
) -> Dict[str, Any]:
    scenes = load_archive(run.paths["archive"])
    out_dir = Path(run.paths["out"])
    reports = {}
    for path in checkpoints:
        checkpoint = load_checkpoint(path)
        _check_compatible(checkpoint.net, scenes)
        name = str(checkpoint.meta.get("variant") or Path(path).stem)
        if name in reports:
            name = f"{name}@{Path(path).parent.name}"
        reports[name] = evaluate_network(
            checkpoint.net,
            checkpoint.states,
            scenes,
            top_m=top_m,
            rf_radius=rf_radius,
            variant=name,
        )
        write_reports(reports[name], out_dir / name)
    write_effective_config(run, out_dir)
    return {"reports": reports, "count": len(reports)}


@log_action("VERIFY", context_getter=_run_context)
def verify_suite(run: RunConfig, hook: GradientHook | None = None) -> Dict[str, Any]:
    report = run_verification(hook)
    return {"report": report, "passed": report.passed}


@log_action("VIZ", context_getter=_run_context)
def visualize_filters(
    run: RunConfig,
    filter_ids: Sequence[int],
    *,
    site_index: int | None = None,
    images: int = 4,
) -> Dict[str, Any]:
    checkpoint, scenes = _load(run)
    out_dir = Path(run.paths["out"])
    written = export_views(
        checkpoint.net,
        scenes,
        filter_ids,
        out_dir,
        site_index=site_index,
        images=images,
    )
    write_effective_config(run, out_dir)
    return {"files": written, "written": len(written)}
