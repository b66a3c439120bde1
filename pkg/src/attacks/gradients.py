"""
Input gradients of frozen models.
"""
from typing import Callable, Tuple, Union

import numpy as np

from src.autodiff.functional import cross_entropy_logits
from src.autodiff.tensor import Tape, Tensor, backward
from src.models.network import Network
from src.models.vae import VAE

Model = Union[Network, VAE]


def input_gradient(model: Model, x: np.ndarray, objective: Callable[[Tensor], Tensor]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradient of objective(model(x)) with respect to x, model in eval mode.

    Returns:
        (gradient shaped like x, logits)
    """
    with model.frozen(), Tape():
        xt = Tensor(x, requires_grad=True)
        logits = model.forward(xt, training=False)
        backward(objective(logits))
    grad = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
    return grad, logits.data


def loss_gradient(model: Model, x: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient of the mean cross-entropy, plus the logits."""
    return input_gradient(model, x, lambda logits: cross_entropy_logits(logits, labels))


def class_gradients(model: Model, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-example gradient of every logit.

    Returns:
        (logits (N, K), gradients (K, N, ...))
    """
    grads = []
    logits = None
    k = 0
    while logits is None or k < logits.shape[1]:
        grad, logits = input_gradient(model, x, lambda out, k=k: logit_sum(out, k))
        grads.append(grad)
        k += 1
    return logits, np.stack(grads)


def logit_sum(logits: Tensor, k: int) -> Tensor:
    """Sum over the batch of logit k; its input gradient is the per-example gradient of logit k."""
    return (logits * Tensor(_one_hot(logits.shape, k), dtype=logits.dtype)).sum()


def _one_hot(shape: Tuple[int, int], k: int) -> np.ndarray:
    mask = np.zeros(shape)
    mask[:, k] = 1.0
    return mask
