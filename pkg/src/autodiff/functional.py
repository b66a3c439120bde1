"""
Neural network primitives on Tensors: convolutions, dense layers, pointwise
activations, dropout, batch normalization and the training losses.

Each primitive computes its forward result with numpy and registers a backward
rule on the active tape.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.autodiff.im2col import col2im, im2col, output_size, transposed_output_size
from src.autodiff.tensor import DimensionError, Tensor, as_tensor, make_result

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
_LOG_FLOOR = 1e-12


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """
    2-D convolution, weight layout (C_out, C_in, K, K).

    Output spatial size is floor((H + 2*pad - K) / stride) + 1.
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d input {x.shape} does not match kernel {weight.shape}")
    if stride < 1:
        raise DimensionError(f"conv2d stride must be >= 1, got {stride}")
    n, _, h, w = x.shape
    c_out, _, k, _ = weight.shape
    if h + 2 * pad < k or w + 2 * pad < k:
        raise DimensionError(f"conv2d kernel {k} larger than padded input {x.shape} (pad={pad})")

    cols, out_h, out_w = im2col(x.data, k, stride, pad)
    w2 = weight.data.reshape(c_out, -1)
    out = cols @ w2.T + bias.data
    out = out.reshape(n, out_h, out_w, c_out).transpose(0, 3, 1, 2)
    x_shape = x.shape

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        dx = col2im(g2 @ w2, x_shape, k, stride, pad)
        dw = (g2.T @ cols).reshape(weight.shape)
        return dx, dw, g2.sum(axis=0)

    return make_result(np.ascontiguousarray(out), (x, weight, bias), "conv2d", vjp)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """
    Transposed 2-D convolution, weight layout (C_in, C_out, K, K).

    This is the gradient map of conv2d with the same (K, stride, pad); output
    spatial size is (H - 1) * stride - 2 * pad + K.
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"conv_transpose2d input {x.shape} does not match kernel {weight.shape}")
    n, c_in, h, w = x.shape
    _, c_out, k, _ = weight.shape
    out_h = transposed_output_size(h, k, stride, pad)
    out_w = transposed_output_size(w, k, stride, pad)
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"conv_transpose2d output size ({out_h}, {out_w}) is not positive for input {x.shape}")

    x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, c_in)
    w2 = weight.data.reshape(c_in, -1)
    out_shape = (n, c_out, out_h, out_w)
    out = col2im(x2 @ w2, out_shape, k, stride, pad) + bias.data.reshape(1, -1, 1, 1)

    def vjp(g):
        cols, _, _ = im2col(g, k, stride, pad)
        dx = (cols @ w2.T).reshape(n, h, w, c_in).transpose(0, 3, 1, 2)
        dw = (x2.T @ cols).reshape(weight.shape)
        return np.ascontiguousarray(dx), dw, g.sum(axis=(0, 2, 3))

    return make_result(np.ascontiguousarray(out), (x, weight, bias), "conv_transpose2d", vjp)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """out = x @ weight + bias, weight layout (D, M)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"dense input {x.shape} does not match weight {weight.shape}")
    return x @ weight + bias


def relu(x: Tensor) -> Tensor:
    return x.relu()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] == 0:
        raise DimensionError(f"softmax needs non-empty rows, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return make_result(out, (x,), "softmax", vjp)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """
    Inverted dropout: zero each element with probability p and scale the
    survivors by 1/(1-p). Identity outside training or when p == 0.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return make_result(x.data * mask, (x,), "dropout", lambda g: (g * mask,))


@dataclass
class BatchNormState:
    """Per-channel running statistics of one batch-norm layer."""
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=np.float64), np.ones(channels, dtype=np.float64), momentum, eps)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """
    Batch normalization over the batch axis (and spatial axes for 4-D input).

    Training mode normalizes with batch statistics and updates the running
    statistics in place; eval mode uses the running statistics.
    """
    if x.ndim not in (2, 4):
        raise DimensionError(f"batch_norm expects 2-D or 4-D input, got {x.shape}")
    if x.shape[0] == 0:
        raise DimensionError("batch_norm on an empty batch")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    view = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    count = x.size // x.shape[1]
    data = x.data
    g = gamma.data.reshape(view)

    if training:
        mean = data.mean(axis=axes)
        var = data.var(axis=axes)
        unbiased = var * count / max(count - 1, 1)
        state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * mean
        state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * unbiased
    else:
        mean, var = state.running_mean, state.running_var

    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(data.dtype).reshape(view)
    x_hat = (data - mean.astype(data.dtype).reshape(view)) * inv_std
    out = g * x_hat + beta.data.reshape(view)

    def vjp(grad):
        d_gamma = (grad * x_hat).sum(axis=axes)
        d_beta = grad.sum(axis=axes)
        d_hat = grad * g
        if training:
            dx = inv_std / count * (count * d_hat - d_hat.sum(axis=axes, keepdims=True)
                                    - x_hat * (d_hat * x_hat).sum(axis=axes, keepdims=True))
        else:
            dx = d_hat * inv_std
        return dx, d_gamma, d_beta

    return make_result(out, (x, gamma, beta), "batch_norm", vjp)


def pointwise(x: Tensor, mode: str, **options) -> Tensor:
    """
    Apply a pointwise mode by name: relu, sigmoid, softmax_rows, dropout, batchnorm.

    dropout takes p, rng, training; batchnorm takes gamma, beta, state, training.
    """
    if mode == "relu":
        return relu(x)
    if mode == "sigmoid":
        return sigmoid(x)
    if mode == "softmax_rows":
        return softmax_rows(x)
    if mode == "dropout":
        return dropout(x, options["p"], options.get("rng"), options.get("training", False))
    if mode == "batchnorm":
        return batch_norm(x, options["gamma"], options["beta"], options["state"], options.get("training", False))
    raise ValueError(f"Unknown pointwise mode '{mode}'")


# Losses, all averaged over the sample (first) axis.

def cross_entropy_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy from raw logits, log-sum-exp computed stably."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if n and (labels.max() >= k or labels.min() < 0):
        raise IndexError(f"label index {int(labels.max())} out of range for {k} classes")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(n), labels].mean()

    def vjp(g):
        probs = np.exp(log_probs)
        probs[np.arange(n), labels] -= 1.0
        return (g * probs / n,)

    return make_result(np.asarray(loss, dtype=z.dtype), (logits,), "cross_entropy", vjp)


def bce_pixels(probs: Tensor, target) -> Tensor:
    """
    Bernoulli negative log-likelihood summed over pixels, averaged over the batch.
    Targets lie in [0, 1]; 0 * log(0) is taken as 0.
    """
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=probs.dtype)
    if target.shape != probs.shape:
        raise DimensionError(f"bce target {target.shape} does not match prediction {probs.shape}")
    n = probs.shape[0]
    p = probs.data
    p_safe = np.clip(p, _LOG_FLOOR, 1.0)
    q_safe = np.clip(1.0 - p, _LOG_FLOOR, 1.0)
    per_pixel = -(target * np.log(p_safe) + (1.0 - target) * np.log(q_safe))
    loss = per_pixel.sum() / n

    def vjp(g):
        return (g * (-(target / p_safe) + (1.0 - target) / q_safe) / n,)

    return make_result(np.asarray(loss, dtype=p.dtype), (probs,), "bce", vjp)


def mse(prediction: Tensor, target) -> Tensor:
    """Squared error summed over features, averaged over the batch."""
    target = as_tensor(target, dtype=prediction.dtype)
    if target.shape != prediction.shape:
        raise DimensionError(f"mse target {target.shape} does not match prediction {prediction.shape}")
    return (prediction - target).square().sum() * (1.0 / prediction.shape[0])


def kl_diag_gaussian(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims, averaged over the batch."""
    if mu.shape != logvar.shape:
        raise DimensionError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    terms = mu.square() + logvar.exp() - logvar - 1.0
    return terms.sum() * (0.5 / mu.shape[0])


def loss_eval(kind: str, prediction: Tensor, target=None, **options) -> Tensor:
    """
    Evaluate a loss by name: cross_entropy_logits (target = labels),
    bce_pixels, mse, kl_diag_gaussian (prediction = mu, options logvar).
    """
    if kind == "cross_entropy_logits":
        return cross_entropy_logits(prediction, target)
    if kind == "bce_pixels":
        return bce_pixels(prediction, target)
    if kind == "mse":
        return mse(prediction, target)
    if kind == "kl_diag_gaussian":
        return kl_diag_gaussian(prediction, options["logvar"])
    raise ValueError(f"Unknown loss kind '{kind}'")


__all__ = [
    "BatchNormState", "batch_norm", "bce_pixels", "conv2d", "conv_transpose2d", "cross_entropy_logits",
    "dense", "dropout", "kl_diag_gaussian", "loss_eval", "mse", "output_size", "pointwise", "relu",
    "sigmoid", "softmax_rows", "transposed_output_size",
]
