"""PGM-визуализации карт фильтра: сырая карта, шаблон T_mu^, маска, теплокарта mu^.

Каждое изображение нормируется на свой максимум (значение пишется в строку
комментария PGM); отрицательные значения обрезаются в 0. Замаскированная
карта нормируется на максимум сырой карты, чтобы их можно было сравнивать.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from partmask_hub.core.exceptions import InvalidParameterError
from partmask_hub.core.network import Network
from partmask_hub.core.tensor import Tensor
from partmask_hub.evaluation.report import collect_maps
from partmask_hub.infra.netpbm import to_gray_bytes, write_pgm
from partmask_hub.synthgen.generator import SyntheticScene


def upsample(values: Tensor, size: int) -> Tensor:
    """Ближайший сосед: n x n → size x size (ячейка i покрывает [i*size/n, ...))."""
    n = values.shape[0]
    index = (np.arange(size) * n) // size
    return values[np.ix_(index, index)]


def normalized(values: Tensor, scale: float | None = None) -> tuple[np.ndarray, float]:
    """uint8-рендер по максимуму (scale); нулевой максимум даёт чёрный кадр."""
    clipped = np.maximum(values, 0.0)
    peak = float(clipped.max()) if scale is None else scale
    if peak <= 0:
        return np.zeros(values.shape, dtype=np.uint8), 0.0
    return to_gray_bytes(clipped / peak), peak


def render_pgm(
    path: Path,
    values: Tensor,
    size: int,
    scale: float | None = None,
) -> float:
    pixels, peak = normalized(upsample(values, size), scale)
    write_pgm(path, pixels, comment=f"normalized by per-image max={peak!r}")
    return peak


def mu_heatmap(mu_index: np.ndarray, n: int) -> np.ndarray:
    """Число изображений, у которых mu^ попал в каждую ячейку: [n, n]."""
    counts = np.bincount(np.asarray(mu_index).reshape(-1), minlength=n * n)
    return counts[: n * n].reshape(n, n)


def _check_filters(filter_ids: Sequence[int], count: int) -> List[int]:
    bad = [f for f in filter_ids if not 0 <= f < count]
    if bad or not filter_ids:
        raise InvalidParameterError(
            name="filters",
            value=list(filter_ids),
            constraint=f"непустой список индексов в [0, {count})",
        )
    return list(filter_ids)


def export_views(
    net: Network,
    scenes: Sequence[SyntheticScene],
    filter_ids: Sequence[int],
    out_dir: Path,
    *,
    site_index: int | None = None,
    images: int = 4,
) -> Dict[str, Path]:
    """Рендеры для первых images сцен и теплокарты mu^ по всему архиву."""
    if site_index is None:
        site_index = next(iter(net.sites))
    if site_index not in net.sites:
        raise InvalidParameterError(
            name="site",
            value=site_index,
            constraint=f"один из {sorted(net.sites)}",
        )
    site = net.sites[site_index]
    filters = _check_filters(filter_ids, site.filters)
    size = net.spec.input_size
    stack = np.stack([scene.image for scene in scenes])
    maps = collect_maps(net, stack)[0][site_index]

    written: Dict[str, Path] = {}
    out_dir.mkdir(parents=True, exist_ok=True)
    for filt in filters:
        for image in range(min(images, len(scenes))):
            stem = f"f{filt:02d}_img{image:04d}"
            raw = maps.raw[image, filt]
            mu = int(maps.mu_index[image, filt])
            raw_path = out_dir / f"{stem}_raw.pgm"
            peak = render_pgm(raw_path, raw, size)
            template_path = out_dir / f"{stem}_template.pgm"
            render_pgm(template_path, site.bank.positives[mu], size)
            masked_path = out_dir / f"{stem}_masked.pgm"
            masked = maps.output[image, filt]
            render_pgm(masked_path, masked, size, scale=peak if peak > 0 else None)
            written[f"{stem}_raw"] = raw_path
            written[f"{stem}_template"] = template_path
            written[f"{stem}_masked"] = masked_path

        counts = mu_heatmap(maps.mu_index[:, filt], site.bank.n)
        heat_path = out_dir / f"f{filt:02d}_heatmap.pgm"
        render_pgm(heat_path, counts.astype(np.float64), size)
        counts_path = out_dir / f"f{filt:02d}_heatmap.tsv"
        counts_path.write_text(
            "\n".join("\t".join(str(v) for v in row) for row in counts) + "\n",
            encoding="utf-8",
        )
        written[f"f{filt:02d}_heatmap"] = heat_path
        written[f"f{filt:02d}_heatmap_counts"] = counts_path
    return written
