"""
Fast gradient sign attacks.
"""
import logging
from typing import Union

import numpy as np

from src.attacks.config import AttackConfigError, AttackResult
from src.attacks.gradients import Model, loss_gradient
from src.autodiff.random import rng_stream
from src.models.classifiers import predict_labels
from src.utils import Stopwatch

logger = logging.getLogger(__name__)


def _sign_step(model: Model, x: np.ndarray, labels: np.ndarray, step: float) -> np.ndarray:
    grad, _ = loss_gradient(model, x, labels)
    return np.clip(x + step * np.sign(grad), 0.0, 1.0).astype(x.dtype)


def fgsm(model: Model, x: np.ndarray, y_true: np.ndarray, eps: float) -> AttackResult:
    """
    x_adv = clip(x + eps * sign(grad_x CE(model(x), y_true)), 0, 1).

    Args:
        model: differentiable classifier
        x: clean images in [0, 1]
        y_true: true labels
        eps: L-infinity budget, >= 0
    """
    if eps < 0:
        raise AttackConfigError(f"eps must be >= 0, got {eps}")
    with Stopwatch() as timer:
        x_adv = _sign_step(model, x, y_true, eps)
    return AttackResult.measure(x, x_adv, predict_labels(model, x_adv), y_true, timer.elapsed)


def rand_fgsm(model: Model, x: np.ndarray, y_true: np.ndarray, eps: float, alpha: float,
              seed: Union[int, np.random.Generator] = 0) -> AttackResult:
    """
    Randomized FGSM: a random sign step of size alpha, then a gradient sign step
    of size eps - alpha taken at the displaced point.

    x' = clip(x + alpha * sign(g)), g ~ N(0, I)
    x_adv = clip(x' + (eps - alpha) * sign(grad_x' CE(model(x'), y_true)))
    """
    if not 0 <= alpha < eps:
        raise AttackConfigError(f"RAND_FGSM needs 0 <= alpha < eps, got alpha={alpha}, eps={eps}")
    rng = rng_stream(seed, "rand_fgsm") if isinstance(seed, (int, np.integer)) else seed
    with Stopwatch() as timer:
        noise = rng.standard_normal(x.shape)
        x_prime = np.clip(x + alpha * np.sign(noise), 0.0, 1.0).astype(x.dtype)
        x_adv = _sign_step(model, x_prime, y_true, eps - alpha)
    return AttackResult.measure(x, x_adv, predict_labels(model, x_adv), y_true, timer.elapsed)
