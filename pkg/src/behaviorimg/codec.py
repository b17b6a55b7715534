"""Normalized feature vector <-> 32x32 grayscale behavior image, plus PNG I/O."""

from __future__ import annotations

import datetime as dt
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .features import N_FEATURES, FeatureVector

IMAGE_SIZE = 32
GRID_ROWS, GRID_COLS = 4, 5
_TOLERANCE = 1e-9

# destination pixel -> source cell, floor mapping
ROW_SOURCE = (np.arange(IMAGE_SIZE) * GRID_ROWS) // IMAGE_SIZE
COL_SOURCE = (np.arange(IMAGE_SIZE) * GRID_COLS) // IMAGE_SIZE
# first destination row/column that lands in each source band
ROW_REPRESENTATIVE = np.array([int(np.argmax(ROW_SOURCE == r)) for r in range(GRID_ROWS)])
COL_REPRESENTATIVE = np.array([int(np.argmax(COL_SOURCE == c)) for c in range(GRID_COLS)])


class OutOfRange(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class BehaviorImage:
    pixels: np.ndarray
    user: str = ""
    date: dt.date | None = None
    label: str = ""

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise FormatError(f"behavior image must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {pixels.shape}")
        if pixels.dtype != np.uint8:
            if pixels.min() < 0 or pixels.max() > 255:
                raise FormatError("pixel values must lie in [0, 255]")
            pixels = pixels.astype(np.uint8)
        self.pixels = pixels

    def filename(self) -> str:
        day = self.date.strftime("%Y%m%d") if self.date else "00000000"
        return f"{self.user}_{day}_{self.label}.png"


def quantize(v: float) -> int:
    """Map a value in [0, 1] to a pixel, rounding half up (0.5 -> 128)."""
    if not (-_TOLERANCE <= v <= 1 + _TOLERANCE) or math.isnan(v):
        raise OutOfRange(f"value {v!r} outside [0, 1]")
    v = min(max(v, 0.0), 1.0)
    return math.floor(v * 255 + 0.5)


def quantize_array(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if np.isnan(values).any() or values.min(initial=0.0) < -_TOLERANCE or values.max(initial=0.0) > 1 + _TOLERANCE:
        raise OutOfRange("values outside [0, 1]")
    return np.floor(np.clip(values, 0.0, 1.0) * 255 + 0.5).astype(np.uint8)


def layout_grid(vector: FeatureVector | np.ndarray) -> np.ndarray:
    """Slot k goes to cell (k // 5, k % 5) of a 4x5 pixel grid."""
    values = vector.values if isinstance(vector, FeatureVector) else np.asarray(vector)
    if values.shape != (N_FEATURES,):
        raise ValueError(f"expected {N_FEATURES} slots, got {values.shape}")
    return quantize_array(values).reshape(GRID_ROWS, GRID_COLS)


def upscale_nearest(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.shape != (GRID_ROWS, GRID_COLS):
        raise ValueError(f"expected a {GRID_ROWS}x{GRID_COLS} grid, got {grid.shape}")
    return grid[np.ix_(ROW_SOURCE, COL_SOURCE)]


def encode(vector: FeatureVector | np.ndarray, user: str = "", date: dt.date | None = None,
           label: str = "") -> BehaviorImage:
    return BehaviorImage(upscale_nearest(layout_grid(vector)), user, date, label)


def decode(image: BehaviorImage | np.ndarray) -> FeatureVector:
    pixels = image.pixels if isinstance(image, BehaviorImage) else np.asarray(image)
    grid = pixels[np.ix_(ROW_REPRESENTATIVE, COL_REPRESENTATIVE)]
    return FeatureVector(grid.reshape(-1).astype(np.float64) / 255, normalized=True)


# ---------------------------------------------------------------------------
# PNG via Pillow: 8-bit grayscale ("L"), fixed compression settings, no metadata

_PNG_SAVE = {"format": "PNG", "compress_level": 9, "optimize": False}


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(buf, **_PNG_SAVE)
    return buf.getvalue()


def decode_png(blob: bytes) -> np.ndarray:
    """Pixels of an 8-bit grayscale PNG of any size."""
    try:
        with Image.open(io.BytesIO(blob)) as img:
            if img.format != "PNG":
                raise FormatError(f"not a PNG file ({img.format})")
            if img.mode != "L":
                raise FormatError(f"expected 8-bit grayscale PNG, got mode {img.mode}")
            img.load()
            return np.asarray(img, dtype=np.uint8).copy()
    except (OSError, SyntaxError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"unreadable PNG: {exc}") from None


def write_png(image: BehaviorImage, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(encode_png(image.pixels))
    return path


def read_png(path: str | Path) -> BehaviorImage:
    pixels = decode_png(Path(path).read_bytes())
    if pixels.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise FormatError(f"{path}: expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {pixels.shape[1]}x{pixels.shape[0]}")
    return BehaviorImage(pixels)
