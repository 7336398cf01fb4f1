import json

import numpy as np
import pytest

from split_inr.core_math import Prng
from split_inr.io import (
    FormatError, dumps_json, read_image, read_volume, write_image, write_pfm, write_spectrum_csv, write_volume,
)


def test_pgm_ppm_round_trip(tmp_path):
    gray = np.arange(12, dtype=float).reshape(3, 4) / 255.0
    write_image(tmp_path / "g.pgm", gray)
    np.testing.assert_allclose(read_image(tmp_path / "g.pgm"), gray, atol=1e-12)
    rgb = Prng(0).uniform_array(0, 1, (5, 3, 3))
    write_image(tmp_path / "c.ppm", rgb)
    back = read_image(tmp_path / "c.ppm")
    assert back.shape == (5, 3, 3)
    assert np.max(np.abs(back - rgb)) <= 0.5 / 255 + 1e-12


def test_pgm_header_with_comment(tmp_path):
    raw = b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255])
    (tmp_path / "h.pgm").write_bytes(raw)
    np.testing.assert_array_equal(read_image(tmp_path / "h.pgm"), [[0.0, 1.0]])


def test_pfm_round_trip_keeps_values_and_orientation(tmp_path):
    img = Prng(1).uniform_array(-2, 5, (4, 6)).astype(np.float32).astype(np.float64)
    write_pfm(tmp_path / "a.pfm", img)
    back = read_image(tmp_path / "a.pfm")
    np.testing.assert_array_equal(back, img)
    # bottom row is stored first
    data = (tmp_path / "a.pfm").read_bytes()
    first = np.frombuffer(data[-img.size * 4:], dtype="<f4")[:6]
    np.testing.assert_array_equal(first, img[-1].astype(np.float32))
    rgb = Prng(2).uniform_array(0, 1, (3, 2, 3)).astype(np.float32).astype(np.float64)
    write_pfm(tmp_path / "c.pfm", rgb)
    np.testing.assert_array_equal(read_image(tmp_path / "c.pfm"), rgb)


def test_unknown_format_rejected(tmp_path):
    (tmp_path / "x.img").write_bytes(b"GIF89a....")
    with pytest.raises(FormatError):
        read_image(tmp_path / "x.img")


def test_volume_round_trip(tmp_path):
    vol = Prng(3).uniform_array(0, 1, (8, 8, 8)).astype(np.float32).astype(np.float64)
    write_volume(tmp_path / "v.raw", vol, threshold=0.25)
    back, meta = read_volume(tmp_path / "v.raw")
    np.testing.assert_array_equal(back, vol)
    assert meta == {"resolution": 8, "extent": 1.0, "threshold": 0.25}
    # x varies fastest in the file
    raw = np.fromfile(tmp_path / "v.raw", dtype="<f4")
    assert raw[1] == np.float32(vol[0, 0, 1])
    with pytest.raises(ValueError):
        write_volume(tmp_path / "w.raw", np.zeros((2, 3, 4)))


def test_json_is_sorted_and_full_precision():
    text = dumps_json({"b": 0.1, "a": [1, 2.5, np.float64(1 / 3)], "c": float("inf")})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    data = json.loads(text)
    assert data["b"] == 0.1 and data["a"][2] == 1 / 3 and data["c"] is None
    assert "0.10000000000000001" in text


def test_spectrum_csv(tmp_path):
    write_spectrum_csv(tmp_path / "s.csv", [3.0, 0.5])
    assert (tmp_path / "s.csv").read_text() == "index,eigenvalue\n0,3\n1,0.5\n"
