"""
Finite-difference verification of backward rules.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from src.autodiff.random import rng_stream
from src.autodiff.tensor import Tape, Tensor, backward, no_grad, precision

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: Dict[str, float] = field(default_factory=dict)
    checked: Dict[str, int] = field(default_factory=dict)
    rejected: bool = False
    reason: str = ""

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.rejected and self.worst <= self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor], tolerance: float = 1e-4,
               h: float = 1e-5, samples: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """
    Compare backward() against central differences for every parameter.

    The check runs in 64-bit mode; parameters are upcast for its duration and
    restored afterwards. f must be deterministic: it is evaluated twice first
    and the report is marked rejected when the two values differ.

    Args:
        f: zero-argument function building a scalar loss from the parameters
        params: tensors to check, keyed by name
        tolerance: maximum accepted relative error
        h: finite-difference step
        samples: entries checked per parameter (None = all)
        seed: seed for choosing the sampled entries

    Returns:
        GradCheckReport with the per-parameter maximum relative error
    """
    report = GradCheckReport(tolerance=tolerance)
    originals = {name: p.data for name, p in params.items()}
    with precision(64):
        try:
            for p in params.values():
                p.data = p.data.astype(np.float64)
                p.grad = None

            with no_grad():
                first, second = f().item(), f().item()
            if first != second:
                report.rejected = True
                report.reason = f"non-deterministic function: {first!r} != {second!r}"
                logger.warning(f"Gradient check rejected: {report.reason}")
                return report

            with Tape():
                loss = f()
                backward(loss)
            analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
                        for name, p in params.items()}

            for name, p in params.items():
                flat = p.data.reshape(-1)
                indices = np.arange(flat.size)
                if samples is not None and samples < flat.size:
                    indices = rng_stream(seed, "gradcheck", name).choice(flat.size, samples, replace=False)
                worst = 0.0
                for i in indices:
                    saved = flat[i]
                    with no_grad():
                        flat[i] = saved + h
                        plus = f().item()
                        flat[i] = saved - h
                        minus = f().item()
                    flat[i] = saved
                    numeric = (plus - minus) / (2.0 * h)
                    worst = max(worst, relative_error(float(analytic[name].reshape(-1)[i]), numeric))
                report.max_rel_error[name] = worst
                report.checked[name] = len(indices)
        finally:
            for name, p in params.items():
                p.data = originals[name]
                p.grad = None
    logger.debug(f"Gradient check worst relative error {report.worst:.3e} over {len(report.checked)} parameters")
    return report
