import json

import numpy as np
import pytest

from nrqi.image_io import (FrameSequence, Image, ImageFormatError, SequenceError, load_image,
                           load_sequence, save_image, save_raw_f32, to_unit_range, write_manifest)


def test_decode_small_pgm(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
    img = load_image(p)
    assert (img.width, img.height) == (2, 2)
    assert img.pixels.tolist() == [[0, 128], [255, 64]]
    assert img.value_range == "uint8"


def test_pgm_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([3, 4]))
    assert load_image(p).pixels.tolist() == [[3, 4]]


def test_truncated_pgm(tmp_path):
    p = tmp_path / "t.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 1, 2]))
    with pytest.raises(ImageFormatError, match="truncated"):
        load_image(p)


@pytest.mark.parametrize("ext", [".pgm", ".png"])
def test_16bit_round_trip(tmp_path, ext):
    rng = np.random.default_rng(3)
    img = Image(rng.integers(0, 65536, (16, 16)), value_range="uint16")
    save_image(img, tmp_path / f"x{ext}")
    back = load_image(tmp_path / f"x{ext}")
    assert back.value_range == "uint16"
    assert np.array_equal(back.pixels, img.pixels)


@pytest.mark.parametrize("ext", [".pgm", ".png"])
def test_8bit_round_trip(tmp_path, ext):
    img = Image(np.random.default_rng(4).integers(0, 256, (5, 9)), value_range="uint8")
    save_image(img, tmp_path / f"x{ext}")
    back = load_image(tmp_path / f"x{ext}")
    assert np.array_equal(back.pixels, img.pixels) and back.value_range == "uint8"


def test_raw_f32_round_trip_is_exact(tmp_path):
    field = np.random.default_rng(5).normal(size=(7, 11)).astype(np.float32)
    save_raw_f32(field, tmp_path / "m.f32")
    back = load_image(tmp_path / "m.f32")
    assert back.value_range == "float"
    assert np.array_equal(back.pixels, field.astype(np.float64))
    assert json.loads((tmp_path / "m.f32.json").read_text())["width"] == 11


def test_raw_missing_sidecar(tmp_path):
    (tmp_path / "m.f32").write_bytes(b"\0" * 16)
    with pytest.raises(ImageFormatError, match="sidecar"):
        load_image(tmp_path / "m.f32")


def test_load_does_not_rescale(tmp_path):
    img = Image([[10, 20, 30]], value_range="uint8")
    save_image(img, tmp_path / "r.pgm")
    assert load_image(tmp_path / "r.pgm").pixels.tolist() == [[10, 20, 30]]


def test_image_invariants():
    with pytest.raises(ValueError):
        Image([[0.5, 1.5]], value_range="normalized")
    with pytest.raises(ValueError):
        Image([[np.nan]], value_range="float")
    with pytest.raises(ValueError):
        Image([[256]], value_range="uint8")
    img = Image([[0.0, 1.0]])
    assert not img.pixels.flags.writeable


def test_to_unit_range():
    assert to_unit_range(Image([[0, 255]], value_range="uint8")).tolist() == [[0.0, 1.0]]
    with pytest.raises(ValueError):
        to_unit_range(Image([[-1.0, 2.0]], value_range="float"))


def _frames(tmp_path, shapes):
    paths = []
    for i, shape in enumerate(shapes):
        p = tmp_path / f"f{i}.pgm"
        save_image(Image(np.full(shape, i), value_range="uint8"), p)
        paths.append(p)
    return paths


def test_sequence_in_order(tmp_path):
    paths = _frames(tmp_path, [(4, 4)] * 3)
    write_manifest(tmp_path / "m.json", paths, "s1", "p1")
    seq = load_sequence(tmp_path / "m.json")
    assert len(seq) == 3
    assert [f.pixels[0, 0] for f in seq] == [0, 1, 2]
    assert (seq.sequence_id, seq.patient_id) == ("s1", "p1")


def test_sequence_dimension_mismatch(tmp_path):
    paths = _frames(tmp_path, [(64, 64), (32, 32)])
    write_manifest(tmp_path / "m.json", paths, "s")
    with pytest.raises(SequenceError, match="mismatch"):
        load_sequence(tmp_path / "m.json")


def test_empty_manifest(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"sequence_id": "s", "frames": []}))
    with pytest.raises(SequenceError):
        load_sequence(tmp_path / "m.json")
    with pytest.raises(SequenceError):
        FrameSequence(())
