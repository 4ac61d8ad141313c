"""Чтение и запись бинарных PGM (P5, 8 бит) и PBM (P4)."""

from __future__ import annotations

from pathlib import Path
from typing import List, Tuple

import numpy as np

from partmask_hub.core.exceptions import ArchiveFormatError

PGM_MAGIC = b"P5"
PBM_MAGIC = b"P4"
MAXVAL = 255


def _header_tokens(data: bytes, needed: int, path: Path) -> Tuple[List[bytes], int]:
    """Токены заголовка и смещение начала растра (комментарии '#' пропускаются)."""
    tokens: List[bytes] = []
    position = 0
    while len(tokens) < needed:
        while position < len(data) and data[position : position + 1].isspace():
            position += 1
        if position >= len(data):
            raise ArchiveFormatError(path=path, reason="заголовок обрезан")
        if data[position : position + 1] == b"#":
            end = data.find(b"\n", position)
            position = len(data) if end < 0 else end + 1
            continue
        start = position
        while position < len(data) and not data[position : position + 1].isspace():
            position += 1
        tokens.append(data[start:position])
    # ровно один пробельный символ перед растром
    return tokens, position + 1


def _dimensions(tokens: List[bytes], path: Path | str) -> List[int]:
    if not all(token.isdigit() for token in tokens):
        raise ArchiveFormatError(path=path, reason=f"нечисловой заголовок {tokens!r}")
    values = [int(token) for token in tokens]
    if 0 in values[:2]:
        raise ArchiveFormatError(path=path, reason="нулевой размер растра")
    return values


def encode_pgm(image: np.ndarray, comment: str | None = None) -> bytes:
    """uint8-изображение [H, W] → байты P5."""
    pixels = np.asarray(image)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ArchiveFormatError(path="<pgm>", reason="ожидался uint8 массив [H, W]")
    height, width = pixels.shape
    header = PGM_MAGIC + b"\n"
    if comment:
        header += b"# " + comment.encode("ascii") + b"\n"
    header += f"{width} {height}\n{MAXVAL}\n".encode("ascii")
    return header + pixels.tobytes()


def decode_pgm(data: bytes, path: Path | str = "<pgm>") -> np.ndarray:
    path = Path(path)
    tokens, offset = _header_tokens(data, 4, path)
    if tokens[0] != PGM_MAGIC:
        raise ArchiveFormatError(path=path, reason="ожидался PGM P5")
    width, height, maxval = _dimensions(tokens[1:], path)
    if maxval != MAXVAL:
        raise ArchiveFormatError(path=path, reason=f"maxval {maxval} != {MAXVAL}")
    raster = data[offset : offset + width * height]
    if len(raster) != width * height:
        raise ArchiveFormatError(path=path, reason="растр обрезан")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def encode_pbm(mask: np.ndarray) -> bytes:
    """Булева маска [H, W] → байты P4 (1 = пиксель части)."""
    bits = np.asarray(mask, dtype=bool)
    height, width = bits.shape
    header = PBM_MAGIC + f"\n{width} {height}\n".encode("ascii")
    return header + np.packbits(bits, axis=1).tobytes()


def decode_pbm(data: bytes, path: Path | str = "<pbm>") -> np.ndarray:
    path = Path(path)
    tokens, offset = _header_tokens(data, 3, path)
    if tokens[0] != PBM_MAGIC:
        raise ArchiveFormatError(path=path, reason="ожидался PBM P4")
    width, height = _dimensions(tokens[1:], path)
    row_bytes = (width + 7) // 8
    raster = data[offset : offset + row_bytes * height]
    if len(raster) != row_bytes * height:
        raise ArchiveFormatError(path=path, reason="растр обрезан")
    packed = np.frombuffer(raster, dtype=np.uint8).reshape(height, row_bytes)
    return np.unpackbits(packed, axis=1)[:, :width].astype(bool)


def to_gray_bytes(values: np.ndarray) -> np.ndarray:
    """[0, 1] → uint8 с округлением."""
    return np.round(np.clip(values, 0.0, 1.0) * MAXVAL).astype(np.uint8)


def write_pgm(path: Path, image: np.ndarray, comment: str | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pgm(image, comment))


def read_pgm(path: Path) -> np.ndarray:
    return decode_pgm(path.read_bytes(), path)
