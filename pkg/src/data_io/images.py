"""
Portable graymap (binary PGM, P5) output for reconstruction grids and single
purified images.
"""
import logging
import math
import os
from typing import Sequence, Union

import numpy as np

from src.autodiff.tensor import DimensionError, Tensor
from src.utils import exclusive_lock

logger = logging.getLogger(__name__)

SEPARATOR_VALUE = 255


def quantize(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and map to bytes, rounding half up (0.5 -> 128)."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _as_gray(image: Union[np.ndarray, Tensor]) -> np.ndarray:
    array = image.data if isinstance(image, Tensor) else np.asarray(image)
    if array.ndim == 3:
        if array.shape[0] != 1:
            raise DimensionError(f"graymap output needs single-channel images, got {array.shape}")
        array = array[0]
    if array.ndim != 2:
        raise DimensionError(f"expected (C, H, W) or (H, W) image, got {array.shape}")
    return np.asarray(array, dtype=np.float64)


def _write_pgm_bytes(path: str, pixels: np.ndarray) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    height, width = pixels.shape
    with exclusive_lock(path), open(path, "wb") as handle:
        handle.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        handle.write(pixels.tobytes())


def write_image_grid(tensors: Sequence[Union[np.ndarray, Tensor]], cols: int, path: str) -> None:
    """
    Tile equally-shaped images into one graymap with 1-pixel separator lines.

    Args:
        tensors: images of shape (C, H, W) with C == 1
        cols: tiles per grid row; the grid has ceil(n / cols) rows
        path: output .pgm path
    """
    if not tensors:
        raise DimensionError("write_image_grid needs at least one image")
    images = [_as_gray(t) for t in tensors]
    height, width = images[0].shape
    if any(img.shape != (height, width) for img in images):
        raise DimensionError("all grid images must have the same shape")
    cols = max(1, cols)
    rows = math.ceil(len(images) / cols)

    canvas = np.full((rows * height + rows - 1, cols * width + cols - 1), SEPARATOR_VALUE, dtype=np.uint8)
    for index, image in enumerate(images):
        r, c = divmod(index, cols)
        top, left = r * (height + 1), c * (width + 1)
        canvas[top:top + height, left:left + width] = quantize(image)
    for index in range(len(images), rows * cols):
        r, c = divmod(index, cols)
        top, left = r * (height + 1), c * (width + 1)
        canvas[top:top + height, left:left + width] = 0
    _write_pgm_bytes(path, canvas)
    logger.debug(f"Wrote {len(images)}-image grid ({rows}x{cols}) to {path}")


def write_pgm(image: Union[np.ndarray, Tensor], path: str) -> None:
    _write_pgm_bytes(path, quantize(_as_gray(image)))


def read_pgm(path: str) -> np.ndarray:
    """Read a binary 8-bit PGM into a float32 (1, H, W) array in [0, 1]."""
    with open(path, "rb") as handle:
        blob = handle.read()
    tokens = []
    position = 0
    while len(tokens) < 4:
        while position < len(blob) and blob[position:position + 1].isspace():
            position += 1
        if blob[position:position + 1] == b"#":
            position = blob.index(b"\n", position) + 1
            continue
        start = position
        while position < len(blob) and not blob[position:position + 1].isspace():
            position += 1
        if start == position:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(blob[start:position])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only 8-bit binary PGM (P5) is supported")
    width, height = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(blob[position + 1:position + 1 + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ValueError(f"{path}: expected {width * height} pixels, found {pixels.size}")
    return (pixels.reshape(1, height, width).astype(np.float32) / np.float32(255.0))
