import datetime as dt
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from behaviorimg.codec import (
    COL_SOURCE, ROW_SOURCE, BehaviorImage, FormatError, OutOfRange, decode, decode_png, encode,
    encode_png, layout_grid, quantize, read_png, upscale_nearest, write_png,
)
from behaviorimg.features import FEATURE_NAMES, FeatureVector


def test_quantize_examples():
    assert quantize(0.0) == 0 and quantize(1.0) == 255
    assert quantize(0.5) == 128
    assert quantize(0.2) == 51
    assert quantize(1 + 5e-10) == 255 and quantize(-5e-10) == 0
    for bad in (1.01, -0.1, float("nan")):
        with pytest.raises(OutOfRange):
            quantize(bad)


def test_layout_examples():
    assert not layout_grid(np.zeros(20)).any()
    v = np.zeros(20)
    v[0] = 1.0
    g = layout_grid(v)
    assert g[0, 0] == 255 and g.sum() == 255
    for k in range(20):
        v = np.zeros(20)
        v[k] = 1.0
        assert tuple(np.argwhere(layout_grid(v))[0]) == (k // 5, k % 5)
    # slot 7 is L9 in the 20-slot vector; the div/mod cell is still (1, 2)
    assert FEATURE_NAMES[7] == "L9"


def test_upscale_examples():
    assert (upscale_nearest(np.full((4, 5), 77, np.uint8)) == 77).all()
    assert (ROW_SOURCE[:8] == 0).all()
    assert COL_SOURCE[31] == 4
    for c in range(32):
        assert COL_SOURCE[c] == (c * 5) // 32


def test_bands_tile_image():
    grid = np.arange(20, dtype=np.uint8).reshape(4, 5)
    img = upscale_nearest(grid)
    seen = set()
    for cell in range(20):
        rows, cols = np.nonzero(img == cell)
        assert rows.size > 0
        # rectangular and fully constant
        block = img[rows.min(): rows.max() + 1, cols.min(): cols.max() + 1]
        assert (block == cell).all() and block.size == rows.size
        seen.update(zip(rows.tolist(), cols.tolist()))
    assert len(seen) == 32 * 32


def test_decode_all_white():
    assert decode(BehaviorImage(np.full((32, 32), 255, np.uint8))).values.tolist() == [1.0] * 20


def test_round_trip_bound_1000_draws():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        v = rng.random(20)
        worst = max(worst, np.abs(decode(encode(v)).values - v).max())
    assert worst <= 1 / 510 + 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 20, elements=st.floats(0, 1)), st.integers(0, 19), st.integers(1, 254))
def test_injective_at_grid_level(v, slot, delta):
    a = layout_grid(v)
    b_vals = a.reshape(-1).astype(float) / 255
    b_vals[slot] = ((int(a.reshape(-1)[slot]) + delta) % 256) / 255
    assert not np.array_equal(encode(v).pixels, encode(b_vals).pixels)


def test_filename_convention():
    img = encode(FeatureVector(np.zeros(20), True), "AAA0001", dt.date(2010, 5, 1), "malicious")
    assert img.filename() == "AAA0001_20100501_malicious.png"


def test_image_validation():
    with pytest.raises(FormatError):
        BehaviorImage(np.zeros((16, 16), np.uint8))
    with pytest.raises(FormatError):
        BehaviorImage(np.full((32, 32), 300))


@settings(max_examples=50, deadline=None)
@given(pixels=arrays(np.uint8, (32, 32)))
def test_png_round_trip(tmp_path_factory, pixels):
    path = tmp_path_factory.mktemp("png") / "x.png"
    write_png(BehaviorImage(pixels), path)
    assert np.array_equal(read_png(path).pixels, pixels)


def test_png_bytes_are_deterministic(tmp_path):
    img = encode(np.random.default_rng(0).random(20))
    write_png(img, tmp_path / "a.png")
    write_png(img, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_png_wrong_size(tmp_path):
    path = tmp_path / "small.png"
    path.write_bytes(encode_png(np.zeros((16, 16), np.uint8)))
    with pytest.raises(FormatError):
        read_png(path)


def _png(width, height, color_type, raw, bit_depth=8):
    def chunk(tag, data):
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data))
    ihdr = struct.pack(">IIBBBBB", width, height, bit_depth, color_type, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b"")


def test_png_rejects_garbage():
    with pytest.raises(FormatError):
        decode_png(b"not an image")


def test_png_rejects_rgb():
    blob = _png(32, 32, 2, b"".join(b"\x00" + bytes(96) for _ in range(32)))
    with pytest.raises(FormatError):
        decode_png(blob)


def test_png_rejects_bad_crc():
    blob = bytearray(encode_png(np.zeros((32, 32), np.uint8)))
    blob[29] ^= 0xFF  # IHDR checksum
    with pytest.raises(FormatError):
        decode_png(bytes(blob))


def _filter_rows(pixels: np.ndarray, ftype: int) -> bytes:
    # reference encoder for the five PNG filter types (bpp = 1)
    out = b""
    prev = np.zeros(pixels.shape[1], dtype=int)
    for row in pixels.astype(int):
        left = np.concatenate([[0], row[:-1]])
        upleft = np.concatenate([[0], prev[:-1]])
        if ftype == 0:
            f = row
        elif ftype == 1:
            f = row - left
        elif ftype == 2:
            f = row - prev
        elif ftype == 3:
            f = row - (left + prev) // 2
        else:
            pred = []
            for a, b, c in zip(left, prev, upleft):
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred.append(a if pa <= pb and pa <= pc else (b if pb <= pc else c))
            f = row - np.array(pred)
        out += bytes([ftype]) + bytes((f % 256).tolist())
        prev = row
    return out


@pytest.mark.parametrize("ftype", [0, 1, 2, 3, 4])
def test_png_reads_every_filter_type(ftype):
    pixels = np.random.default_rng(ftype).integers(0, 256, (32, 32), dtype=np.uint8)
    assert np.array_equal(decode_png(_png(32, 32, 0, _filter_rows(pixels, ftype))), pixels)
