"""Архив сцен: изображения PGM (P5), маски частей PBM (P4) и индекс index.txt.

Строка индекса (поля через табуляцию)::

    <id>  <категория>  <файл изображения>  <top,left,bottom,right>  <ориентиры>

Ориентиры: записи ``part_id@row,col@файл_маски`` через ';' (пусто у
отрицательных сцен, категория которых -1).
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import numpy as np

from partmask_hub.core.exceptions import ArchiveFormatError
from partmask_hub.infra.netpbm import (
    MAXVAL,
    decode_pbm,
    decode_pgm,
    encode_pbm,
    encode_pgm,
    to_gray_bytes,
)
from partmask_hub.synthgen.generator import SyntheticScene

INDEX_NAME = "index.txt"
INDEX_HEADER = "# partmask scene archive v1"
COLUMNS = "# id\tcategory\timage\tbox\tlandmarks"


def _scene_line(number: int, scene: SyntheticScene, root: Path) -> str:
    scene_id = f"scene_{number:05d}"
    image_name = f"{scene_id}.pgm"
    (root / image_name).write_bytes(encode_pgm(to_gray_bytes(scene.image)))
    entries = []
    for position, ((part_id, (row, col)), mask) in enumerate(
        zip(scene.landmarks, scene.part_masks),
    ):
        mask_name = f"{scene_id}_p{position}.pbm"
        (root / mask_name).write_bytes(encode_pbm(mask))
        entries.append(f"{part_id}@{row},{col}@{mask_name}")
    box = ",".join(str(v) for v in scene.object_box)
    return "\t".join(
        [scene_id, str(scene.category), image_name, box, ";".join(entries)],
    )


def save_archive(root: Path | str, scenes: Sequence[SyntheticScene]) -> Path:
    """Записать сцены в каталог; индекс пишется последним и атомарно."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = [INDEX_HEADER, COLUMNS]
    lines.extend(
        _scene_line(number, scene, root) for number, scene in enumerate(scenes)
    )
    index_path = root / INDEX_NAME
    tmp_path = index_path.with_suffix(".tmp")
    tmp_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp_path.replace(index_path)
    return index_path


def _parse_line(root: Path, line: str, number: int) -> SyntheticScene:
    fields = line.split("\t")
    if len(fields) != 5:
        raise ArchiveFormatError(
            path=root / INDEX_NAME,
            reason=f"строка {number}: ожидалось 5 полей, получено {len(fields)}",
        )
    _, category, image_name, box, landmark_field = fields
    image_path = root / image_name
    pixels = decode_pgm(image_path.read_bytes(), image_path)
    landmarks = []
    masks = []
    for entry in filter(None, landmark_field.split(";")):
        try:
            part_id, coords, mask_name = entry.split("@")
            row, col = (int(v) for v in coords.split(","))
        except ValueError as exc:
            raise ArchiveFormatError(
                path=root / INDEX_NAME,
                reason=f"строка {number}: ориентир '{entry}'",
            ) from exc
        mask_path = root / mask_name
        masks.append(decode_pbm(mask_path.read_bytes(), mask_path))
        landmarks.append((int(part_id), (row, col)))
    top, left, bottom, right = (int(v) for v in box.split(","))
    return SyntheticScene(
        image=pixels.astype(np.float64) / MAXVAL,
        category=int(category),
        landmarks=tuple(landmarks),
        part_masks=tuple(masks),
        object_box=(top, left, bottom, right),
    )


def load_archive(root: Path | str) -> List[SyntheticScene]:
    root = Path(root)
    index_path = root / INDEX_NAME
    if not index_path.exists():
        raise FileNotFoundError(f"Индекс архива не найден: {index_path}")
    lines = index_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != INDEX_HEADER:
        raise ArchiveFormatError(path=index_path, reason="нет заголовка архива")
    scenes = [
        _parse_line(root, line, number)
        for number, line in enumerate(lines, start=1)
        if line and not line.startswith("#")
    ]
    if not scenes:
        raise ArchiveFormatError(path=index_path, reason="архив пуст")
    return scenes
