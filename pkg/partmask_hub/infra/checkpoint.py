"""Контейнер GBX1: параметры сети, банки шаблонов и состояния фильтров.

Формат файла::

    b"GBX1\\n"
    <JSON-заголовок в одну строку, ключи отсортированы>\\n
    <сырые блоки float64 little-endian в порядке манифеста>

Манифест: список записей {"section", "name", "shape"}; секции идут в
порядке params, templates, filter_states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

from partmask_hub.core.exceptions import CheckpointFormatError
from partmask_hub.core.filter_loss import FilterState
from partmask_hub.core.network import ArchitectureSpec, Network
from partmask_hub.core.tensor import Tensor

MAGIC = b"GBX1\n"
FORMAT_VERSION = 1
BLOCK_DTYPE = np.dtype("<f8")
HEADER_KEYS = ("architecture", "epoch", "filter_states", "manifest", "seed")
SECTIONS = ("params", "templates", "filter_states")


@dataclass(eq=False)
class Checkpoint:
    net: Network
    states: Dict[int, List[FilterState]]
    epoch: int = 0
    meta: Dict[str, Any] = field(default_factory=dict)


def _blocks(
    net: Network,
    states: Dict[int, List[FilterState]],
) -> Tuple[List[Dict[str, Any]], List[Tensor]]:
    manifest: List[Dict[str, Any]] = []
    arrays: List[Tensor] = []

    def push(section: str, name: str, array: Tensor) -> None:
        manifest.append({"section": section, "name": name, "shape": list(array.shape)})
        arrays.append(np.asarray(array, dtype=np.float64))

    for name in net.param_shapes():
        push("params", name, net.params[name])
    for index, site in net.sites.items():
        push("templates", f"{index}.stack", site.bank.stack)
        push("templates", f"{index}.prior", site.bank.prior)
    for index in net.sites:
        for filt, state in enumerate(states.get(index, [])):
            if state.log_z is not None:
                push("filter_states", f"{index}.{filt}.log_z", state.log_z)
    return manifest, arrays


def _state_header(states: Dict[int, List[FilterState]]) -> Dict[str, Any]:
    return {
        str(index): [
            {
                "decay": state.decay,
                "log_px": state.log_px,
                "target_category": state.target_category,
                "update_count": state.update_count,
            }
            for state in site_states
        ]
        for index, site_states in states.items()
    }


def save_checkpoint(
    path: Path | str,
    net: Network,
    states: Dict[int, List[FilterState]],
    *,
    epoch: int = 0,
    meta: Dict[str, Any] | None = None,
) -> Path:
    """Атомарно записать чекпойнт (через временный файл)."""
    path = Path(path)
    manifest, arrays = _blocks(net, states)
    header = {
        "architecture": net.spec.to_dict(),
        "epoch": epoch,
        "filter_states": _state_header(states),
        "manifest": manifest,
        "meta": meta or {},
        "seed": net.seed,
        "templates": {
            str(index): site.bank.params() for index, site in net.sites.items()
        },
        "version": FORMAT_VERSION,
    }
    line = json.dumps(header, sort_keys=True, ensure_ascii=False)

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    with tmp_path.open("wb") as file:
        file.write(MAGIC)
        file.write(line.encode("utf-8") + b"\n")
        for array in arrays:
            file.write(array.astype(BLOCK_DTYPE).tobytes())
    tmp_path.replace(path)
    return path


def _read_header(path: Path, raw: bytes) -> Tuple[Dict[str, Any], int]:
    if not raw.startswith(MAGIC):
        raise CheckpointFormatError(path=path, reason="нет сигнатуры GBX1")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointFormatError(path=path, reason="заголовок не завершён")
    try:
        header = json.loads(raw[len(MAGIC) : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(path=path, reason="заголовок не JSON") from exc
    if not isinstance(header, dict):
        raise CheckpointFormatError(path=path, reason="заголовок не объект JSON")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointFormatError(
            path=path,
            reason=f"неподдерживаемая версия {header.get('version')!r}",
        )
    missing = [key for key in HEADER_KEYS if key not in header]
    if missing:
        raise CheckpointFormatError(
            path=path,
            reason=f"в заголовке нет ключей {', '.join(missing)}",
        )
    return header, end + 1


def _read_blocks(
    path: Path,
    raw: bytes,
    offset: int,
    manifest: List[Dict[str, Any]],
) -> Dict[Tuple[str, str], Tensor]:
    blocks: Dict[Tuple[str, str], Tensor] = {}
    for entry in manifest:
        shape = tuple(int(extent) for extent in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        size = count * BLOCK_DTYPE.itemsize
        if offset + size > len(raw):
            raise CheckpointFormatError(
                path=path,
                reason=f"блок {entry['name']} обрезан",
            )
        array = np.frombuffer(raw, dtype=BLOCK_DTYPE, count=count, offset=offset)
        blocks[(entry["section"], entry["name"])] = array.astype(np.float64).reshape(
            shape,
        )
        offset += size
    if offset != len(raw):
        raise CheckpointFormatError(path=path, reason="лишние байты после блоков")
    return blocks


def load_checkpoint(path: Path | str) -> Checkpoint:
    """Прочитать чекпойнт; банки шаблонов сверяются с пересобранными."""
    path = Path(path)
    raw = path.read_bytes()
    header, offset = _read_header(path, raw)
    try:
        return _decode(path, raw, header, offset)
    except (KeyError, TypeError, AttributeError) as exc:
        raise CheckpointFormatError(
            path=path,
            reason=f"некорректная запись заголовка: {exc!r}",
        ) from exc


def _decode(
    path: Path,
    raw: bytes,
    header: Dict[str, Any],
    offset: int,
) -> Checkpoint:
    blocks = _read_blocks(path, raw, offset, header["manifest"])

    spec = ArchitectureSpec.from_dict(header["architecture"])
    params = {
        name: array for (section, name), array in blocks.items() if section == "params"
    }
    net = Network(spec, params, seed=int(header["seed"]))

    for index, site in net.sites.items():
        stored = blocks.get(("templates", f"{index}.stack"))
        if stored is None or not np.array_equal(stored, site.bank.stack):
            raise CheckpointFormatError(
                path=path,
                reason=f"шаблоны сайта {index} не совпадают с архитектурой",
            )

    states: Dict[int, List[FilterState]] = {}
    for key, entries in header["filter_states"].items():
        index = int(key)
        states[index] = [
            FilterState(
                log_z=blocks.get(("filter_states", f"{index}.{filt}.log_z")),
                log_px=float(entry["log_px"]),
                target_category=entry["target_category"],
                update_count=int(entry["update_count"]),
                decay=float(entry["decay"]),
            )
            for filt, entry in enumerate(entries)
        ]
    if set(states) != set(net.sites):
        raise CheckpointFormatError(
            path=path,
            reason="состояния фильтров не соответствуют сайтам сети",
        )
    return Checkpoint(
        net=net,
        states=states,
        epoch=int(header["epoch"]),
        meta=dict(header.get("meta", {})),
    )
