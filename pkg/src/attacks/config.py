"""
Attack configurations and results.
"""
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

FGSM = "FGSM"
RAND_FGSM = "RAND_FGSM"
CW_L2 = "CW_L2"
DEEPFOOL = "DEEPFOOL"
FAMILIES = (FGSM, RAND_FGSM, CW_L2, DEEPFOOL)

CORPUS_EPSILONS = (0.25, 0.3, 0.35, 0.4)
CORPUS_CW_LRS = (6.0, 8.0, 10.0, 12.0)


class AttackConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    """
    One attack configuration.

    Attributes:
        family: FGSM, RAND_FGSM, CW_L2 or DEEPFOOL
        eps: L-infinity budget of the FGSM family
        alpha: RAND_FGSM random step, 0 <= alpha < eps
        lr: CW Adam step on the tanh-space variable, before lr_scale
        lr_scale: multiplier applied to lr
        steps: CW optimization steps
        const_c: CW weight of the margin term
        kappa: CW confidence margin
        binary_search_steps: CW searches over const_c when > 1
        max_iter: DeepFool iterations
        overshoot: DeepFool overshoot factor
        seed: seed of the attack's random streams
    """
    family: str
    eps: float = 0.3
    alpha: float = 0.05
    lr: float = 10.0
    lr_scale: float = 1e-3
    steps: int = 100
    const_c: float = 10.0
    kappa: float = 0.0
    binary_search_steps: int = 1
    max_iter: int = 50
    overshoot: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise AttackConfigError(f"Unknown attack family '{self.family}', expected one of {FAMILIES}")
        if self.eps < 0:
            raise AttackConfigError(f"eps must be >= 0, got {self.eps}")
        if self.family == RAND_FGSM and not 0 <= self.alpha < self.eps:
            raise AttackConfigError(f"RAND_FGSM needs 0 <= alpha < eps, got alpha={self.alpha}, eps={self.eps}")
        if self.steps < 1 or self.max_iter < 1 or self.binary_search_steps < 1:
            raise AttackConfigError("steps, max_iter and binary_search_steps must be >= 1")
        if self.lr <= 0 or self.lr_scale <= 0:
            raise AttackConfigError("CW lr and lr_scale must be positive")
        if self.kappa < 0 or self.const_c <= 0 or self.overshoot < 0:
            raise AttackConfigError("kappa and overshoot must be >= 0 and const_c positive")

    @property
    def tag(self) -> str:
        """Provenance tag, e.g. 'FGSM(eps=0.35)'."""
        if self.family == FGSM:
            return f"FGSM(eps={self.eps:g})"
        if self.family == RAND_FGSM:
            return f"RAND_FGSM(eps={self.eps:g},alpha={self.alpha:g})"
        if self.family == CW_L2:
            return f"CW_L2(lr={self.lr:g})"
        return f"DEEPFOOL(overshoot={self.overshoot:g})"

    @property
    def report_id(self) -> str:
        """Short attack id used in report rows."""
        return {FGSM: "fgsm", RAND_FGSM: "rand_fgsm", CW_L2: "cw", DEEPFOOL: "deepfool"}[self.family]

    def with_seed(self, seed: int) -> "AttackConfig":
        return replace(self, seed=seed)


@dataclass
class AttackResult:
    """
    Attack output for a batch.

    Attributes:
        x_adv: adversarial images in [0, 1]
        success: prediction differs from the true label
        l2, linf: per-example norms of x_adv - x
        wall_time_s: attack wall time
    """
    x_adv: np.ndarray
    success: np.ndarray
    l2: np.ndarray
    linf: np.ndarray
    wall_time_s: float = 0.0

    @classmethod
    def measure(cls, x: np.ndarray, x_adv: np.ndarray, predicted: np.ndarray, labels: np.ndarray,
                wall_time_s: float = 0.0) -> "AttackResult":
        delta = (x_adv.astype(np.float64) - x.astype(np.float64)).reshape(len(x), -1)
        return cls(x_adv, np.asarray(predicted) != np.asarray(labels), np.sqrt((delta ** 2).sum(axis=1)),
                   np.abs(delta).max(axis=1) if delta.size else np.zeros(len(x)), wall_time_s)

    def __len__(self) -> int:
        return len(self.x_adv)

    @property
    def success_rate(self) -> float:
        return float(self.success.mean()) if len(self.success) else 0.0

    @property
    def median_l2(self) -> float:
        return float(np.median(self.l2)) if len(self.l2) else 0.0

    @property
    def max_linf(self) -> float:
        return float(self.linf.max()) if len(self.linf) else 0.0

    def summary(self) -> str:
        return (f"success {100.0 * self.success_rate:.2f}%, median L2 {self.median_l2:.4f}, "
                f"max Linf {self.max_linf:.4f}, {self.wall_time_s:.2f}s")

    @staticmethod
    def concatenate(parts: Sequence["AttackResult"]) -> "AttackResult":
        return AttackResult(np.concatenate([p.x_adv for p in parts]), np.concatenate([p.success for p in parts]),
                            np.concatenate([p.l2 for p in parts]), np.concatenate([p.linf for p in parts]),
                            sum(p.wall_time_s for p in parts))


def training_suite(epsilons: Sequence[float] = CORPUS_EPSILONS, alpha: float = 0.05,
                   cw_lrs: Sequence[float] = CORPUS_CW_LRS, seed: int = 0, **cw_options) -> List[AttackConfig]:
    """The 12-configuration corpus recipe: FGSM and RAND_FGSM at each eps, CW at each lr."""
    suite = [AttackConfig(FGSM, eps=eps, seed=seed) for eps in epsilons]
    suite += [AttackConfig(RAND_FGSM, eps=eps, alpha=alpha, seed=seed) for eps in epsilons]
    suite += [AttackConfig(CW_L2, lr=lr, seed=seed, **cw_options) for lr in cw_lrs]
    return suite


def evaluation_attacks(seed: int = 0, eps: float = 0.3, alpha: float = 0.05, cw_lr: float = 10.0,
                       rand_eps: Optional[float] = None, **cw_options) -> Tuple[AttackConfig, ...]:
    """Test-time attacks of the white-box table: FGSM, RAND_FGSM and CW. RAND_FGSM uses eps unless rand_eps is set."""
    rand_eps = eps if rand_eps is None else rand_eps
    return (AttackConfig(FGSM, eps=eps, seed=seed), AttackConfig(RAND_FGSM, eps=rand_eps, alpha=alpha, seed=seed),
            AttackConfig(CW_L2, lr=cw_lr, seed=seed, **cw_options))
