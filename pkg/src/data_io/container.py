"""
Versioned, checksummed binary container for named arrays.

Layout (little endian):
    8 bytes  | magic b"DVAEPACK"
    u32      | format version
    u64      | header length
    header   | UTF-8 JSON: kind, metadata, array table (name, dtype, shape, offset, nbytes)
    payload  | raw array bytes, C order
    u32      | CRC-32 over header and payload

Writers hold an exclusive lock, write to a temporary file in the target
directory and rename it into place.
"""
import json
import logging
import os
import struct
import tempfile
import zlib
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from src.utils import exclusive_lock

logger = logging.getLogger(__name__)

MAGIC = b"DVAEPACK"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    """The file is not a readable container."""


class UnsupportedVersionError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


def write_container(path: str, kind: str, metadata: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> None:
    """
    Write named arrays and JSON metadata to path atomically.

    Args:
        path: destination file
        kind: content tag checked on read ('pairs', 'checkpoint', 'dataset')
        metadata: JSON-serializable metadata
        arrays: arrays keyed by unique name
    """
    table = []
    chunks = []
    offset = 0
    for name, array in arrays.items():
        array = np.ascontiguousarray(array)
        little = array.astype(array.dtype.newbyteorder("<"), copy=False)
        raw = little.tobytes()
        table.append({"name": name, "dtype": little.dtype.str, "shape": list(array.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "metadata": metadata, "arrays": table}, sort_keys=True).encode("utf-8")
    payload = b"".join(chunks)
    checksum = zlib.crc32(payload, zlib.crc32(header)) & 0xFFFFFFFF

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with exclusive_lock(path):
        fd, temp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(MAGIC)
                handle.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
                handle.write(header)
                handle.write(payload)
                handle.write(struct.pack("<I", checksum))
            os.replace(temp_path, path)
        except BaseException:
            if os.path.exists(temp_path):
                os.remove(temp_path)
            raise
    logger.debug(f"Wrote {kind} container {path} ({len(table)} arrays, {offset} payload bytes)")


def read_container(path: str, kind: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read a container written by write_container.

    Returns:
        (metadata, arrays)
    """
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < 24 or blob[:8] != MAGIC:
        raise ContainerError(f"{path} is not a container file")
    version, header_len = struct.unpack("<IQ", blob[8:20])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: container version {version} is not supported "
                                      f"(this build reads version {FORMAT_VERSION})")
    header_end = 20 + header_len
    if len(blob) < header_end + 4:
        raise ContainerError(f"{path} is truncated")
    header = blob[20:header_end]
    payload = blob[header_end:-4]
    stored, = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload, zlib.crc32(header)) & 0xFFFFFFFF != stored:
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupt")

    info = json.loads(header.decode("utf-8"))
    if info["kind"] != kind:
        raise ContainerError(f"{path} holds '{info['kind']}', expected '{kind}'")
    arrays = {}
    for entry in info["arrays"]:
        start = entry["offset"]
        raw = payload[start:start + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return info["metadata"], arrays
