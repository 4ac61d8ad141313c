import numpy as np
import pytest

from partmask_hub.core.exceptions import ArchiveFormatError
from partmask_hub.infra.archive import INDEX_NAME, load_archive, save_archive
from partmask_hub.infra.netpbm import (
    decode_pbm,
    decode_pgm,
    encode_pbm,
    encode_pgm,
    to_gray_bytes,
)
from partmask_hub.synthgen.config import GeneratorConfig
from partmask_hub.synthgen.generator import generate


def test_pgm_bytes_layout():
    image = np.array([[0, 255], [7, 128]], dtype=np.uint8)
    assert encode_pgm(image) == b"P5\n2 2\n255\n\x00\xff\x07\x80"


def test_pgm_decode_skips_comments():
    data = b"P5\n# note\n2 1\n255\n\x10\x20"
    np.testing.assert_array_equal(decode_pgm(data), [[16, 32]])


def test_pbm_packs_rows_to_bytes():
    mask = np.zeros((2, 10), dtype=bool)
    mask[0, 0] = mask[1, 9] = True
    data = encode_pbm(mask)
    assert data == b"P4\n10 2\n\x80\x00\x00\x40"
    np.testing.assert_array_equal(decode_pbm(data), mask)


@pytest.mark.parametrize(
    "data",
    [
        b"P6\n1 1\n255\n\x00",
        b"P5\n2 2\n255\n\x00",
        b"P5\n1 1\n65535\n\x00\x00",
        b"P5\nw 1\n255\n\x00",
        b"P5\n1 -1\n255\n\x00",
        b"P5\n0 1\n255\n",
    ],
    ids=["magic", "short", "maxval", "width", "negative", "empty"],
)
def test_pgm_rejects_bad_input(data):
    with pytest.raises(ArchiveFormatError):
        decode_pgm(data)


def test_pbm_rejects_non_numeric_size():
    with pytest.raises(ArchiveFormatError):
        decode_pbm(b"P4\n1x 1\n\x80")


def test_gray_bytes_round_and_clip():
    values = np.array([[-0.5, 0.5, 1.5]])
    np.testing.assert_array_equal(to_gray_bytes(values), [[0, 128, 255]])


def test_archive_restores_scenes(archive_dir, scenes):
    restored = load_archive(archive_dir)
    assert len(restored) == len(scenes)
    for original, loaded in zip(scenes, restored):
        np.testing.assert_array_equal(loaded.image, original.image)
        assert loaded.category == original.category
        assert loaded.landmarks == original.landmarks
        assert loaded.object_box == original.object_box
        for a, b in zip(original.part_masks, loaded.part_masks):
            np.testing.assert_array_equal(a, b)


def test_archive_keeps_negative_scenes(tmp_path):
    scenes = generate(GeneratorConfig(negative=True), 7)
    save_archive(tmp_path, scenes)
    restored = load_archive(tmp_path)
    assert restored[6].is_negative and restored[6].landmarks == ()


def test_archives_are_byte_identical(tmp_path, scenes):
    first, second = tmp_path / "a", tmp_path / "b"
    save_archive(first, scenes)
    save_archive(second, scenes)
    names = sorted(path.name for path in first.iterdir())
    assert names == sorted(path.name for path in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_missing_index_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_archive(tmp_path)


def test_bad_header_raises(archive_dir):
    index = archive_dir / INDEX_NAME
    index.write_text("bogus\n", encoding="utf-8")
    with pytest.raises(ArchiveFormatError):
        load_archive(archive_dir)


def test_bad_row_raises(archive_dir):
    index = archive_dir / INDEX_NAME
    lines = index.read_text(encoding="utf-8").splitlines()
    lines[2] = lines[2].split("\t", 1)[0]
    index.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ArchiveFormatError):
        load_archive(archive_dir)
