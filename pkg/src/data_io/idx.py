"""
IDX file reader for MNIST and Fashion-MNIST.

Data format (big endian):
    u32 | magic (0x00000803 images, 0x00000801 labels)
    u32 | item count
    u32 | row count        (images only)
    u32 | column count     (images only)
    u8[] | payload, row-wise
"""
import logging
import os
import struct
from typing import Optional, Tuple

import numpy as np

from src.data_io.datasets import LabeledDataset

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Wrong magic number or malformed header."""


class DatasetConsistencyError(ValueError):
    """Image and label files disagree."""


class TruncatedFileError(OSError):
    """The file ended before the header or payload was complete."""


def _read_exact(handle, count: int, path: str) -> bytes:
    offset = handle.tell()
    data = handle.read(count)
    if len(data) != count:
        raise TruncatedFileError(f"{path}: expected {count} bytes at byte offset {offset}, got {len(data)}")
    return data


def _read_header(handle, path: str, expected_magic: int, dims: int) -> Tuple[int, ...]:
    magic, = struct.unpack(">I", _read_exact(handle, 4, path))
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: magic number {magic:#010x} does not match expected {expected_magic:#010x}")
    return struct.unpack(f">{dims}I", _read_exact(handle, 4 * dims, path))


def read_idx_images(path: str) -> np.ndarray:
    """Read an IDX image file into a uint8 array of shape (N, rows, cols)."""
    with open(path, "rb") as handle:
        count, rows, cols = _read_header(handle, path, IMAGE_MAGIC, 3)
        payload = _read_exact(handle, count * rows * cols, path)
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path: str) -> np.ndarray:
    with open(path, "rb") as handle:
        count, = _read_header(handle, path, LABEL_MAGIC, 1)
        payload = _read_exact(handle, count, path)
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_idx_dataset(images_path: str, labels_path: str, expected_dims: Optional[Tuple[int, int]] = (28, 28),
                     name: str = "mnist", split: str = "train", num_classes: int = 10) -> LabeledDataset:
    """
    Load an IDX image/label pair into a LabeledDataset with pixels in [0, 1].

    Args:
        images_path: path of the images file
        labels_path: path of the labels file
        expected_dims: (rows, cols) the images must have, or None to accept any
        name: dataset name recorded on the result
        split: 'train' or 'test'
        num_classes: label range

    Returns:
        LabeledDataset with images of shape (N, 1, rows, cols)
    """
    for path in (images_path, labels_path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"IDX file not found: {path}")

    raw = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if raw.shape[0] != labels.shape[0]:
        raise DatasetConsistencyError(
            f"{images_path} holds {raw.shape[0]} images but {labels_path} holds {labels.shape[0]} labels")
    if expected_dims is not None and tuple(raw.shape[1:]) != tuple(expected_dims):
        raise IdxFormatError(f"{images_path}: images are {raw.shape[1:]}, expected {tuple(expected_dims)}")
    if labels.size and labels.max() >= num_classes:
        raise DatasetConsistencyError(f"{labels_path}: label {labels.max()} outside [0, {num_classes})")

    images = (raw.astype(np.float32) / np.float32(255.0))[:, None, :, :]
    logger.info(f"Loaded {name}/{split}: {images.shape[0]} images of {raw.shape[1]}x{raw.shape[2]}")
    return LabeledDataset(images=images, labels=labels, name=name, split=split, num_classes=num_classes)
