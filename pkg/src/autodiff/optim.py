"""
First-order optimizers over named parameter tensors.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from src.autodiff.tensor import Tensor

logger = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    """Raised when a gradient holds NaN or Inf; names the offending parameter."""


@dataclass
class OptimizerState:
    """
    Optimizer hyperparameters and per-parameter moment buffers.

    Attributes:
        kind: 'sgd' or 'adam'
        lr: learning rate
        beta1, beta2, eps_num: Adam constants
        step: number of completed optimizer_step calls
        m, v: Adam first/second moments keyed by parameter name
    """
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"Unknown optimizer kind '{self.kind}'")


def optimizer_step(params: Mapping[str, Tensor], state: OptimizerState,
                   grads: Optional[Mapping[str, np.ndarray]] = None) -> None:
    """
    Apply one update in place to every parameter that has a gradient.

    Args:
        params: parameter tensors keyed by name
        state: optimizer state, updated in place (step counter always advances)
        grads: explicit gradients; defaults to each parameter's .grad
    """
    if grads is None:
        grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"Non-finite gradient for parameter '{name}' at step {state.step}")
        if grad.shape != params[name].shape:
            raise ValueError(f"Gradient shape {grad.shape} does not match parameter '{name}' {params[name].shape}")

    state.step += 1
    t = state.step
    for name, grad in grads.items():
        param = params[name]
        if state.kind == "sgd":
            param.data -= (state.lr * grad).astype(param.dtype)
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        param.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps_num)).astype(param.dtype)


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for param in params.values():
        param.grad = None


def make_optimizer(kind: str, lr: float) -> OptimizerState:
    logger.debug(f"Creating {kind} optimizer with lr={lr}")
    return OptimizerState(kind=kind, lr=lr)
