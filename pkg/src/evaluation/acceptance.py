"""
Acceptance thresholds checked at the end of a full reproduction run.
"""
import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional

from src.evaluation.report import CLEAN_ATTACK, EvalReport
from src.evaluation.speed import PURIFY_METHOD, ZSEARCH_METHOD

logger = logging.getLogger(__name__)


class AcceptanceError(RuntimeError):
    """One or more acceptance thresholds were violated."""

    def __init__(self, violations: List[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class DatasetThresholds:
    """
    Accuracy thresholds as fractions; None skips the check.

    Attributes:
        arch: classifier the absolute thresholds apply to
        clean_min: undefended accuracy on clean images
        fgsm_undefended_max: undefended white-box FGSM accuracy
        fgsm_vae_min: VAE-mode white-box FGSM accuracy
        blackbox_undefended_max: undefended transferred FGSM accuracy
        blackbox_vae_min: VAE-mode transferred FGSM accuracy
    """
    arch: str = "A"
    clean_min: Optional[float] = None
    fgsm_undefended_max: Optional[float] = None
    fgsm_vae_min: Optional[float] = None
    blackbox_undefended_max: Optional[float] = None
    blackbox_vae_min: Optional[float] = None


@dataclass(frozen=True)
class AcceptanceCriteria:
    """
    Attributes:
        datasets: per-dataset thresholds
        ordering_tolerance: slack of VAE <= REC in the white-box ordering
        e2e_tolerance: slack of E2E >= VAE
        e2e_gain_min: gain of E2E over the pre-finetune VAE mode on FGSM
        heldout_cw_drop_min: held-out CW must lose at least this much against the all-three VAE
        deepfool_recovery_max: the DeepFool-augmented held-out CW must come within this of it
        speedup_min: purify speedup over z-search at (200, 10)
        scaling_tolerance: relative deviation of z-search time from linear in L * R
    """
    datasets: Mapping[str, DatasetThresholds]
    ordering_tolerance: float = 0.02
    e2e_tolerance: float = 0.01
    e2e_gain_min: Optional[float] = 0.01
    heldout_cw_drop_min: Optional[float] = 0.25
    deepfool_recovery_max: Optional[float] = 0.05
    speedup_min: Optional[float] = 20.0
    scaling_tolerance: Optional[float] = 0.25


def _below(violations: List[str], what: str, value: Optional[float], minimum: Optional[float]) -> None:
    if value is not None and minimum is not None and value < minimum:
        violations.append(f"{what} is {100.0 * value:.2f}%, needs >= {100.0 * minimum:.2f}%")


def _above(violations: List[str], what: str, value: Optional[float], maximum: Optional[float]) -> None:
    if value is not None and maximum is not None and value > maximum:
        violations.append(f"{what} is {100.0 * value:.2f}%, needs <= {100.0 * maximum:.2f}%")


def check_whitebox(report: EvalReport, criteria: AcceptanceCriteria) -> List[str]:
    violations: List[str] = []
    for dataset, limits in criteria.datasets.items():
        cid = f"{dataset}/{limits.arch}"
        _below(violations, f"clean accuracy of {cid}", report.cell(CLEAN_ATTACK, cid, "no_attack"), limits.clean_min)
        _above(violations, f"undefended FGSM on {cid}", report.cell("fgsm", cid, "no_defense"),
               limits.fgsm_undefended_max)
        _below(violations, f"VAE-defended FGSM on {cid}", report.cell("fgsm", cid, "vae"), limits.fgsm_vae_min)

    for (attack, cid), cells in report.grouped().items():
        if attack == CLEAN_ATTACK:
            continue
        acc = {mode: row.accuracy for mode, row in cells.items()}
        where = f"{attack} / {cid}"
        if "no_defense" in acc and "vae" in acc and not acc["no_defense"] < acc["vae"]:
            violations.append(f"{where}: VAE defense does not beat no defense")
        if "vae" in acc and "vae_rec" in acc and acc["vae"] > acc["vae_rec"] + criteria.ordering_tolerance:
            violations.append(f"{where}: VAE exceeds REC by more than {100.0 * criteria.ordering_tolerance:.0f}%")
        if "vae" in acc and "vae_e2e" in acc and acc["vae_e2e"] < acc["vae"] - criteria.e2e_tolerance:
            violations.append(f"{where}: E2E falls more than {100.0 * criteria.e2e_tolerance:.0f}% below VAE")
        if attack == "fgsm" and "vae" in acc and "vae_e2e" in acc and criteria.e2e_gain_min is not None \
                and acc["vae_e2e"] - acc["vae"] < criteria.e2e_gain_min:
            violations.append(f"{where}: E2E gains only {100.0 * (acc['vae_e2e'] - acc['vae']):.2f}% over VAE")
    return violations


def check_blackbox(report: EvalReport, criteria: AcceptanceCriteria) -> List[str]:
    violations: List[str] = []
    for (attack, cid), cells in report.grouped().items():
        dataset, target = cid.split("/")[:2]
        limits = criteria.datasets.get(dataset)
        if limits is None or target != limits.arch:
            continue
        if "no_defense" in cells:
            _above(violations, f"black-box undefended {cid}", cells["no_defense"].accuracy,
                   limits.blackbox_undefended_max)
        if "vae" in cells:
            _below(violations, f"black-box VAE-defended {cid}", cells["vae"].accuracy, limits.blackbox_vae_min)
    return violations


def check_leaveoneout(report: EvalReport, criteria: AcceptanceCriteria) -> List[str]:
    violations: List[str] = []
    for (attack, cid), cells in report.grouped().items():
        if attack != "cw" or "vae" not in cells:
            continue
        reference = cells["vae"].accuracy
        heldout = report.cell("cw_heldout", cid, "vae")
        augmented = report.cell("cw_heldout+deepfool", cid, "vae")
        if heldout is not None and criteria.heldout_cw_drop_min is not None \
                and reference - heldout < criteria.heldout_cw_drop_min:
            violations.append(f"held-out CW on {cid} drops only {100.0 * (reference - heldout):.2f}%")
        if augmented is not None and criteria.deepfool_recovery_max is not None \
                and reference - augmented > criteria.deepfool_recovery_max:
            violations.append(f"DeepFool augmentation on {cid} stays {100.0 * (reference - augmented):.2f}% "
                              f"below the all-three value")
    return violations


def check_speed(report: EvalReport, criteria: AcceptanceCriteria) -> List[str]:
    violations: List[str] = []
    purify_rows = [row for row in report.timings if row.method == PURIFY_METHOD]
    zsearch = {(row.steps, row.restarts): row.wall_time_s for row in report.timings if row.method == ZSEARCH_METHOD}
    if not purify_rows or (200, 10) not in zsearch:
        return violations
    base = zsearch[(200, 10)]
    speedup = base / max(purify_rows[0].wall_time_s, 1e-12)
    if criteria.speedup_min is not None and speedup < criteria.speedup_min:
        violations.append(f"purify is only {speedup:.1f}x faster than z-search (200, 10)")
    if criteria.scaling_tolerance is not None:
        for (steps, restarts), seconds in zsearch.items():
            expected = base * steps * restarts / 2000.0
            if abs(seconds - expected) > criteria.scaling_tolerance * expected:
                violations.append(f"z-search ({steps}, {restarts}) took {seconds:.2f}s, "
                                  f"linear scaling predicts {expected:.2f}s")
    return violations


def enforce_acceptance(criteria: AcceptanceCriteria, whitebox: Optional[EvalReport] = None,
                       blackbox: Optional[EvalReport] = None, leaveoneout: Optional[EvalReport] = None,
                       speed: Optional[EvalReport] = None) -> None:
    """
    Raises:
        AcceptanceError: listing every violated threshold
    """
    violations: List[str] = []
    if whitebox is not None:
        violations += check_whitebox(whitebox, criteria)
    if blackbox is not None:
        violations += check_blackbox(blackbox, criteria)
    if leaveoneout is not None:
        violations += check_leaveoneout(leaveoneout, criteria)
    if speed is not None:
        violations += check_speed(speed, criteria)
    for violation in violations:
        logger.error(f"Acceptance: {violation}")
    if violations:
        raise AcceptanceError(violations)
    logger.info("All acceptance thresholds hold")
