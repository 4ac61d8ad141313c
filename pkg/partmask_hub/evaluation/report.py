"""Сборка MetricsReport по сети и архиву сцен, вывод TSV/JSON и сводки."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np
from prettytable import PrettyTable

from partmask_hub.core.exceptions import ShapeMismatchError
from partmask_hub.core.filter_loss import CategoryTally, FilterState
from partmask_hub.core.network import Network
from partmask_hub.core.tensor import (
    NEGATIVE_CATEGORY,
    TaskLossKind,
    Tensor,
    count_correct,
)
from partmask_hub.evaluation.metrics import (
    DEFAULT_TOP_M,
    INFERENCE_SCORE,
    VARIANCE_CONVENTION,
    activation_stats,
    baseline_instability,
    location_instability,
    part_interpretability,
    semantic_purity,
    single_filter_accuracy,
)
from partmask_hub.logging_config import train_child_logger
from partmask_hub.synthgen.generator import SyntheticScene

logger = train_child_logger("report")

EVAL_BATCH = 64
TSV_COLUMNS = (
    "filter_id",
    "target_category",
    "P_f",
    "instability",
    "purity",
    "mean_target_act",
    "mean_other_act",
)
TSV_NAME = "report.tsv"
JSON_NAME = "report.json"


@dataclass(frozen=True)
class FilterMetrics:
    filter_id: str
    site: int
    filter_index: int
    target_category: int | None
    category_source: str
    P_f: float
    per_part: Dict[int, float]
    instability: float | None
    instability_kind: str
    purity: float
    mean_target_act: float | None
    mean_other_act: float | None
    single_filter_accuracy: float | None = None
    single_filter_threshold: float | None = None


@dataclass(frozen=True)
class MetricsReport:
    filters: List[FilterMetrics]
    header: Dict[str, Any] = field(default_factory=dict)
    accuracy: float | None = None
    site_purity: Dict[int, float] = field(default_factory=dict)

    def aggregates(self) -> Dict[str, float | None]:
        def mean(name: str) -> float | None:
            values = [getattr(f, name) for f in self.filters]
            values = [v for v in values if v is not None]
            return float(np.mean(values)) if values else None

        purity = (
            float(np.mean(list(self.site_purity.values())))
            if self.site_purity
            else None
        )
        return {
            "P_f": mean("P_f"),
            "instability": mean("instability"),
            "purity": purity,
            "mean_target_act": mean("mean_target_act"),
            "mean_other_act": mean("mean_other_act"),
            "single_filter_accuracy": mean("single_filter_accuracy"),
            "accuracy": self.accuracy,
        }


@dataclass(eq=False)
class SiteMaps:
    """Карты одного сайта на всём архиве."""

    raw: Tensor  # [N, M, n, n], до маски
    output: Tensor  # после маски (или raw без маски)
    mu_index: np.ndarray  # [N, M]


def collect_maps(net: Network, images: Tensor) -> tuple[Dict[int, SiteMaps], Tensor]:
    """Прямой проход по пакетам: карты всех сайтов и логиты."""
    parts: Dict[int, List[SiteMaps]] = {index: [] for index in net.sites}
    logits = []
    for start in range(0, len(images), EVAL_BATCH):
        result = net.forward(images[start : start + EVAL_BATCH])
        logits.append(result.logits)
        for record in result.records:
            output = record.masked if record.masked is not None else record.raw
            parts[record.site.conv_index].append(
                SiteMaps(raw=record.raw, output=output, mu_index=record.mu_index),
            )
    maps = {
        index: SiteMaps(
            raw=np.concatenate([p.raw for p in chunks]),
            output=np.concatenate([p.output for p in chunks]),
            mu_index=np.concatenate([p.mu_index for p in chunks]),
        )
        for index, chunks in parts.items()
    }
    return maps, np.concatenate(logits)


def _targets(
    site_maps: SiteMaps,
    states: Sequence[FilterState] | None,
    categories: np.ndarray,
    num_categories: int,
) -> tuple[List[int | None], List[str]]:
    stored = [None if states is None else s.target_category for s in states or []]
    if stored and all(c is not None for c in stored):
        return stored, ["train"] * len(stored)
    tally = CategoryTally(site_maps.raw.shape[1], num_categories)
    tally.add(site_maps.raw, categories.tolist())
    assigned = tally.assign()
    merged = []
    sources = []
    for position, category in enumerate(assigned):
        known = stored[position] if position < len(stored) else None
        merged.append(category if known is None else known)
        sources.append("eval" if known is None else "train")
    return merged, sources


def _accuracy(net: Network, logits: Tensor, categories: np.ndarray) -> float | None:
    keep = np.ones(len(categories), dtype=bool)
    if TaskLossKind(net.spec.loss_kind) is TaskLossKind.SOFTMAX:
        keep = categories != NEGATIVE_CATEGORY
    if not keep.any():
        return None
    return count_correct(logits[keep], categories[keep], net.spec.loss_kind) / int(
        keep.sum(),
    )


def evaluate_network(
    net: Network,
    states: Mapping[int, Sequence[FilterState]] | None,
    scenes: Sequence[SyntheticScene],
    *,
    top_m: int = DEFAULT_TOP_M,
    rf_radius: float | None = None,
    variant: str = "",
) -> MetricsReport:
    """Все метрики по каждому фильтру каждого сайта сети."""
    images = np.stack([scene.image for scene in scenes])
    if images.shape[1:] != (net.spec.input_size, net.spec.input_size):
        raise ShapeMismatchError(
            operation="eval",
            expected=(net.spec.input_size, net.spec.input_size),
            actual=images.shape[1:],
        )
    categories = np.array([scene.category for scene in scenes], dtype=np.int64)
    site_maps, logits = collect_maps(net, images)

    filters: List[FilterMetrics] = []
    site_purity: Dict[int, float] = {}
    for index, site in net.sites.items():
        maps = site_maps[index]
        site_purity[index] = semantic_purity(maps.raw, maps.mu_index, site.bank)
        targets, sources = _targets(
            maps,
            None if states is None else states.get(index),
            categories,
            net.spec.num_categories,
        )
        for filt in range(site.filters):
            raw = maps.raw[:, filt]
            target = targets[filt]
            peaks = raw.max(axis=(1, 2))
            interp = part_interpretability(maps.output[:, filt], scenes, rf_radius)
            if site.masked and sources[filt] == "train":
                instability = location_instability(
                    raw,
                    scenes,
                    top_m,
                    scores=peaks,
                    category=target,
                )
                kind = "target"
            else:
                instability = baseline_instability(raw, scenes, top_m, scores=peaks)
                kind = "baseline"
            stats = activation_stats(raw, categories, target)
            is_target = categories == target
            sfa = None
            if is_target.any() and not is_target.all():
                sfa = single_filter_accuracy(peaks, is_target)
            filters.append(
                FilterMetrics(
                    filter_id=f"{index}:{filt}",
                    site=index,
                    filter_index=filt,
                    target_category=target,
                    category_source=sources[filt],
                    P_f=interp.p_f,
                    per_part=interp.per_part,
                    instability=instability.value,
                    instability_kind=kind,
                    purity=semantic_purity(raw, maps.mu_index[:, filt], site.bank),
                    mean_target_act=stats.target_mean,
                    mean_other_act=stats.other_mean,
                    single_filter_accuracy=None if sfa is None else sfa.accuracy,
                    single_filter_threshold=None if sfa is None else sfa.threshold,
                ),
            )

    header = {
        "variant": variant,
        "scenes": len(scenes),
        "top_m": top_m,
        "rf_radius": rf_radius,
        "inference_score": INFERENCE_SCORE,
        "variance": VARIANCE_CONVENTION,
    }
    report = MetricsReport(
        filters=filters,
        header=header,
        accuracy=_accuracy(net, logits, categories),
        site_purity=site_purity,
    )
    logger.info("Eval %s: %s", variant or "-", json.dumps(report.aggregates()))
    return report


# ------------------------------------------------------------------- output


def _cell(value: Any) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def format_tsv(report: MetricsReport) -> str:
    lines = [f"# {key}={_cell(value)}" for key, value in report.header.items()]
    lines.append("\t".join(TSV_COLUMNS))
    for metrics in report.filters:
        lines.append("\t".join(_cell(getattr(metrics, c)) for c in TSV_COLUMNS))
    lines.append("# summary")
    for key, value in report.aggregates().items():
        lines.append(f"# {key}\t{_cell(value)}")
    return "\n".join(lines) + "\n"


def report_to_dict(report: MetricsReport) -> Dict[str, Any]:
    filters = []
    for metrics in report.filters:
        data = asdict(metrics)
        data["per_part"] = {str(k): v for k, v in metrics.per_part.items()}
        filters.append(data)
    return {
        "header": report.header,
        "filters": filters,
        "site_purity": {str(k): v for k, v in report.site_purity.items()},
        "summary": report.aggregates(),
    }


def write_reports(report: MetricsReport, out_dir: Path) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    tsv_path = out_dir / TSV_NAME
    json_path = out_dir / JSON_NAME
    tsv_path.write_text(format_tsv(report), encoding="utf-8")
    json_path.write_text(
        json.dumps(report_to_dict(report), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return tsv_path, json_path


def summary_table(reports: Mapping[str, MetricsReport]) -> PrettyTable:
    """Сводка по вариантам: одна строка на отчёт."""
    table = PrettyTable()
    table.field_names = [
        "variant",
        "P_f",
        "instability",
        "purity",
        "target act",
        "other act",
        "accuracy",
    ]
    for name, report in reports.items():
        summary = report.aggregates()
        table.add_row(
            [
                name,
                _cell(summary["P_f"]),
                _cell(summary["instability"]),
                _cell(summary["purity"]),
                _cell(summary["mean_target_act"]),
                _cell(summary["mean_other_act"]),
                _cell(summary["accuracy"]),
            ],
        )
    table.align = "r"
    table.align["variant"] = "l"
    return table
