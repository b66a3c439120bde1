"""
Classifiers A-E.

A, B and C are convolutional, D and E are fully connected. All end in an
FC(num_classes) + Softmax head; forward passes return logits.
"""
import logging
from typing import Optional, Tuple

import numpy as np

from src.autodiff.functional import softmax_rows
from src.autodiff.tensor import Tensor, no_grad
from src.models.layers import CLASSIFIER_ROWS, parse_rows
from src.models.network import INIT_FAN_IN, Network
from src.utils import batch_slices

logger = logging.getLogger(__name__)

ARCHITECTURES = tuple(sorted(CLASSIFIER_ROWS))


class UnknownArchitectureError(ValueError):
    pass


def build_classifier(arch: str, in_channels: int = 1, num_classes: int = 10, seed: int = 0,
                     image_size: Tuple[int, int] = (28, 28)) -> Network:
    """
    Build classifier `arch` with freshly initialized weights.

    Args:
        arch: one of A, B, C, D, E
        in_channels: image channels, substituted for '*'
        num_classes: width of the final dense layer
        seed: run seed; weights come from the (seed, 'init', name, layer) streams
        image_size: (H, W) of the input images

    Returns:
        Network with fan-in scaled normal weights and zero biases
    """
    arch = str(arch).upper()
    if arch not in CLASSIFIER_ROWS:
        raise UnknownArchitectureError(f"Unknown classifier architecture '{arch}', expected one of {ARCHITECTURES}")
    specs = parse_rows(CLASSIFIER_ROWS[arch])
    head = max(i for i, spec in enumerate(specs) if spec.kind == "FC")
    specs[head] = specs[head].with_args(num_classes)
    model = Network(specs, (in_channels, *image_size), in_channels, name=f"classifier_{arch}", seed=seed,
                    init=INIT_FAN_IN)
    model.metadata["arch"] = arch
    logger.debug(f"Built {model}")
    return model


def classifier_forward(model: Network, x: Tensor, mode: str = "eval",
                       rng: Optional[np.random.Generator] = None) -> Tensor:
    """Logits (N, K); mode 'train' enables dropout (rng required), 'eval' disables it."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got '{mode}'")
    return model.forward(x, training=mode == "train", rng=rng)


def predict_logits(model: Network, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    """Eval-mode logits for a numpy batch, computed without recording a tape."""
    chunks = []
    with no_grad():
        for part in batch_slices(images.shape[0], batch_size):
            chunks.append(model.forward(Tensor(images[part]), training=False).data)
    return np.concatenate(chunks) if chunks else np.zeros((0, model.output_shape[0]))


def predict_labels(model: Network, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    return predict_logits(model, images, batch_size).argmax(axis=1)


def predict_probabilities(model: Network, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    with no_grad():
        return softmax_rows(Tensor(predict_logits(model, images, batch_size))).data


def accuracy(model: Network, images: np.ndarray, labels: np.ndarray, batch_size: int = 500) -> Tuple[int, int]:
    """(correct, total) of eval-mode predictions."""
    predicted = predict_labels(model, images, batch_size)
    return int(np.sum(predicted == np.asarray(labels))), int(len(labels))
