"""
Carlini-Wagner L2 attack, untargeted.

The image is parameterized as x' = (tanh(w) + 1) / 2 so every iterate lies in
(0, 1). Adam minimizes ||x' - x||^2 + c * max(Z_y - max_{i != y} Z_i, -kappa)
over w. The lowest-norm successful iterate is kept per example; examples that
never succeed return their last iterate.
"""
import logging

import numpy as np

from src.attacks.config import CW_L2, AttackConfig, AttackConfigError, AttackResult
from src.attacks.gradients import Model
from src.autodiff.optim import make_optimizer, optimizer_step
from src.autodiff.tensor import Tape, Tensor, backward
from src.models.classifiers import predict_labels, predict_logits
from src.utils import Stopwatch

logger = logging.getLogger(__name__)

_TANH_LIMIT = 0.999999
_MASK_OFFSET = 1e4
_C_UPPER = 1e10


def _margin_objective(model: Model, w: Tensor, x: np.ndarray, one_hot: np.ndarray, const_c: np.ndarray,
                      kappa: float):
    x_prime = (w.tanh() + 1.0) * 0.5
    axes = tuple(range(1, x.ndim))
    distance = (x_prime - Tensor(x, dtype=w.dtype)).square().sum(axis=axes)
    logits = model.forward(x_prime, training=False)
    mask = Tensor(one_hot, dtype=w.dtype)
    real = (logits * mask).sum(axis=1)
    other = (logits - mask * _MASK_OFFSET).max(axis=1)
    margin = (real - other).maximum(-kappa)
    loss = (distance + margin * Tensor(const_c, dtype=w.dtype)).sum()
    return loss, x_prime.data, distance.data, logits.data


def _run(model: Model, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig, const_c: np.ndarray):
    """One optimization at fixed c. Returns (best images, best L2^2, found)."""
    one_hot = np.eye(predict_logits(model, x[:1]).shape[1])[labels]
    w_init = np.arctanh(np.clip(x.astype(np.float64) * 2.0 - 1.0, -1.0, 1.0) * _TANH_LIMIT)
    w = Tensor(w_init.astype(x.dtype), requires_grad=True)
    optimizer = make_optimizer("adam", cfg.lr * cfg.lr_scale)
    best = x.copy()
    best_l2 = np.full(len(x), np.inf)
    found = np.zeros(len(x), dtype=bool)
    last = x.copy()
    for step in range(cfg.steps):
        with Tape():
            loss, x_prime, distance, logits = _margin_objective(model, w, x, one_hot, const_c, cfg.kappa)
            backward(loss)
        succeeded = logits.argmax(axis=1) != labels
        improved = succeeded & (distance < best_l2)
        best_l2[improved] = distance[improved]
        best[improved] = x_prime[improved]
        found |= succeeded
        last = x_prime
        optimizer_step({"w": w}, optimizer)
        w.grad = None
        if step % 20 == 0:
            logger.debug(f"CW step {step}: loss {float(loss.data):.4f}, {int(found.sum())}/{len(x)} found")
    best[~found] = last[~found]
    return best.astype(x.dtype), best_l2, found


def cw_l2(model: Model, x: np.ndarray, y_true: np.ndarray, cfg: AttackConfig) -> AttackResult:
    """
    Untargeted CW-L2 against model.

    With cfg.binary_search_steps > 1 the constant c is searched per example:
    halved towards the last success, multiplied by 10 while no success is seen.
    """
    if cfg.family != CW_L2:
        raise AttackConfigError(f"cw_l2 needs a {CW_L2} config, got {cfg.family}")
    labels = np.asarray(y_true, dtype=np.int64)
    with Stopwatch() as timer, model.frozen():
        const_c = np.full(len(x), cfg.const_c)
        lower = np.zeros(len(x))
        upper = np.full(len(x), _C_UPPER)
        best = None
        best_l2 = np.full(len(x), np.inf)
        for search in range(cfg.binary_search_steps):
            images, l2, found = _run(model, x, labels, cfg, const_c)
            if best is None:
                best = images
            better = found & (l2 < best_l2)
            best[better] = images[better]
            best_l2[better] = l2[better]
            if cfg.binary_search_steps == 1:
                break
            upper = np.where(found, np.minimum(upper, const_c), upper)
            lower = np.where(found, lower, np.maximum(lower, const_c))
            const_c = np.where(upper < _C_UPPER / 10, (lower + upper) / 2.0, const_c * 10.0)
            logger.debug(f"CW search {search}: {int(found.sum())}/{len(x)} succeeded")
    return AttackResult.measure(x, best, predict_labels(model, best), labels, timer.elapsed)
