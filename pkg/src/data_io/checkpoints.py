"""
Model checkpoints: parameters, batch-norm statistics, descriptor and training
metadata in one container file.
"""
import logging
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np

from src.data_io.container import read_container, write_container
from src.models.network import Network
from src.models.vae import VAE

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "checkpoint"
Model = Union[Network, VAE]


class ArchitectureMismatchError(ValueError):
    """The checkpoint was written for a different architecture."""


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def save_checkpoint(model: Model, path: str, metadata: Optional[Mapping[str, Any]] = None) -> None:
    """
    Write model to path.

    Args:
        model: classifier Network or VAE
        path: destination file, replaced atomically
        metadata: extra training metadata (seed, epochs, loss history); merged over model.metadata
    """
    arrays: Dict[str, np.ndarray] = {}
    for name, tensor in model.parameters().items():
        arrays[f"param:{name}"] = tensor.data
    for name, buffer in model.buffers().items():
        arrays[f"buffer:{name}"] = buffer
    info = {
        "model": type(model).__name__,
        "descriptor": model.descriptor,
        "input_shape": list(model.input_shape),
        "metadata": _jsonable({**model.metadata, **dict(metadata or {})}),
    }
    write_container(path, CHECKPOINT_KIND, info, arrays)
    logger.info(f"Saved {type(model).__name__} checkpoint ({len(arrays)} arrays) to {path}")


def read_checkpoint_metadata(path: str) -> Dict[str, Any]:
    info, _ = read_container(path, CHECKPOINT_KIND)
    return info["metadata"]


def _first_difference(found, expected) -> str:
    for index in range(max(len(found), len(expected))):
        a = found[index] if index < len(found) else "<none>"
        b = expected[index] if index < len(expected) else "<none>"
        if a != b:
            return f"layer row {index}: checkpoint has '{a}', expected '{b}'"
    return ""


def load_checkpoint(path: str, expected: Model) -> Model:
    """
    Load the weights stored at path into `expected`, a model of the declared
    architecture, and return it.

    Raises:
        ArchitectureMismatchError: descriptor rows, input shape or parameter shapes differ;
            the message names the first differing layer
    """
    info, arrays = read_container(path, CHECKPOINT_KIND)
    if info["model"] != type(expected).__name__:
        raise ArchitectureMismatchError(f"{path} holds a {info['model']}, expected a {type(expected).__name__}")
    difference = _first_difference(info["descriptor"], expected.descriptor)
    if difference:
        raise ArchitectureMismatchError(f"{path}: {difference}")
    if tuple(info["input_shape"]) != tuple(expected.input_shape):
        raise ArchitectureMismatchError(f"{path}: input shape {tuple(info['input_shape'])} "
                                        f"differs from {tuple(expected.input_shape)}")

    params = expected.parameters()
    stored = {k.split(":", 1)[1]: v for k, v in arrays.items() if k.startswith("param:")}
    if set(stored) != set(params):
        missing = sorted(set(params) - set(stored)) or sorted(set(stored) - set(params))
        raise ArchitectureMismatchError(f"{path}: parameter sets differ at '{missing[0]}'")
    for name, tensor in params.items():
        if stored[name].shape != tensor.shape:
            raise ArchitectureMismatchError(f"{path}: parameter '{name}' has shape {stored[name].shape}, "
                                            f"expected {tensor.shape}")
        tensor.data = stored[name]
        tensor.grad = None
    expected.load_buffers({k.split(":", 1)[1]: v for k, v in arrays.items() if k.startswith("buffer:")})
    expected.metadata = dict(info["metadata"])
    logger.info(f"Loaded {type(expected).__name__} checkpoint from {path}")
    return expected
