"""
DeepFool: iterative minimal perturbation towards the nearest linearized class
boundary.
"""
import logging

import numpy as np

from src.attacks.config import AttackResult
from src.attacks.gradients import Model, class_gradients
from src.models.classifiers import predict_labels
from src.utils import Stopwatch

logger = logging.getLogger(__name__)


def deepfool(model: Model, x: np.ndarray, max_iter: int = 50, overshoot: float = 0.02,
             y_true: np.ndarray = None) -> AttackResult:
    """
    Untargeted DeepFool.

    Each iteration linearizes the model at the current point and, over every
    class k other than the original prediction, takes the step
    r = |f_k| / ||w_k||^2 * w_k of smallest norm, where f_k and w_k are the
    logit difference to the original class and its gradient. Ties go to the
    lowest class index. The accumulated step is scaled by (1 + overshoot) and
    the image is clipped to [0, 1]. An example stops once its label flips.

    Args:
        model: differentiable multiclass classifier
        x: images in [0, 1]
        max_iter: iteration limit
        overshoot: step scale past the boundary
        y_true: labels for the success mask; defaults to the clean predictions
    """
    with Stopwatch() as timer, model.frozen():
        original = predict_labels(model, x)
        r_total = np.zeros(x.shape, dtype=np.float64)
        x_adv = x.copy()
        active = np.ones(len(x), dtype=bool)
        for iteration in range(max_iter):
            if not active.any():
                break
            index = np.flatnonzero(active)
            logits, grads = class_gradients(model, x_adv[index])
            current = logits.argmax(axis=1)
            flipped = current != original[index]
            active[index[flipped]] = False
            index, logits, grads = index[~flipped], logits[~flipped], grads[:, ~flipped]
            if len(index) == 0:
                break

            own = original[index]
            local = np.arange(len(index))
            f = logits.astype(np.float64) - logits[local, own][:, None]
            w = grads.astype(np.float64) - grads[own, local][None]
            w_norm = np.sqrt((w.reshape(w.shape[0], w.shape[1], -1) ** 2).sum(axis=2)).T
            with np.errstate(divide="ignore", invalid="ignore"):
                distance = np.abs(f) / w_norm
            distance[local, own] = np.inf
            distance[~np.isfinite(distance)] = np.inf
            nearest = np.argmin(distance, axis=1)
            scale = np.abs(f[local, nearest]) / np.maximum(w_norm[local, nearest] ** 2, 1e-30)
            scale[~np.isfinite(distance[local, nearest])] = 0.0
            step = w[nearest, local] * scale.reshape((-1,) + (1,) * (x.ndim - 1))
            r_total[index] += step
            x_adv[index] = np.clip(x[index] + (1.0 + overshoot) * r_total[index], 0.0, 1.0).astype(x.dtype)
            logger.debug(f"DeepFool iteration {iteration}: {len(index)} examples still active")
    labels = original if y_true is None else np.asarray(y_true)
    return AttackResult.measure(x, x_adv, predict_labels(model, x_adv), labels, timer.elapsed)
