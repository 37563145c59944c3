"""Grayscale image files (binary PGM, optional PNG) and grid tiling."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from disent_toolkit.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


def to_gray(image: np.ndarray) -> np.ndarray:
    """Reduce (H, W), (1, H, W) or (C, H, W) to a 2-D array; channels are averaged."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3:
        return image[0] if image.shape[0] == 1 else image.mean(axis=0)
    raise ShapeError(f"expected a 2-D or 3-D image, got shape {image.shape}")


def quantize(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(to_gray(image) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: Path, image: np.ndarray) -> Path:
    """Write a binary (P5) 8-bit PGM; values are clipped to [0, 1]."""
    pixels = quantize(image)
    height, width = pixels.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"P5\n%d %d\n255\n" % (width, height) + pixels.tobytes())
    return path


def read_pgm(path: Path) -> np.ndarray:
    """Read a binary PGM written by :func:`write_pgm` into [0, 1] floats."""
    raw = path.read_bytes()
    fields: list[bytes] = []
    offset = 0
    while len(fields) < 4:
        while raw[offset : offset + 1].isspace():
            offset += 1
        end = offset
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[offset:end])
        offset = end
    if fields[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    width, height, maxval = (int(f) for f in fields[1:])
    data = np.frombuffer(raw[offset + 1 : offset + 1 + width * height], dtype=np.uint8)
    return data.reshape(height, width).astype(np.float64) / maxval


def tile_grid(tiles: np.ndarray) -> np.ndarray:
    """Tile a (rows, cols, H, W) or (rows, cols, C, H, W) array into one 2-D image."""
    tiles = np.asarray(tiles, dtype=np.float64)
    if tiles.ndim == 5:
        tiles = tiles[:, :, 0] if tiles.shape[2] == 1 else tiles.mean(axis=2)
    if tiles.ndim != 4:
        raise ShapeError(f"expected (rows, cols, H, W) tiles, got {tiles.shape}")
    rows, cols, height, width = tiles.shape
    return tiles.transpose(0, 2, 1, 3).reshape(rows * height, cols * width)


def write_png(path: Path, image: np.ndarray) -> Path:
    """Write a grayscale PNG copy through matplotlib (optional ``png`` extra)."""
    try:
        from matplotlib import image as mpimg
    except ImportError as exc:
        raise ConfigError("PNG export needs matplotlib; install disent-toolkit[png]") from exc
    path.parent.mkdir(parents=True, exist_ok=True)
    mpimg.imsave(path, np.clip(to_gray(image), 0.0, 1.0), cmap="gray", vmin=0.0, vmax=1.0)
    return path


def write_image(path: Path, image: np.ndarray, png: bool = False) -> list[Path]:
    """Write ``path`` as PGM and, when requested, a sibling ``.png``."""
    written = [write_pgm(path, image)]
    if png:
        written.append(write_png(path.with_suffix(".png"), image))
    logger.debug("Wrote %s", ", ".join(str(p) for p in written))
    return written
