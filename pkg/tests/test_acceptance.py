import pytest

from src.evaluation.acceptance import (AcceptanceCriteria, AcceptanceError, DatasetThresholds, check_blackbox,
                                       check_leaveoneout, check_speed, check_whitebox, enforce_acceptance)
from src.evaluation.report import CLEAN_ATTACK, EvalReport, TimingRow
from src.evaluation.speed import PURIFY_METHOD, ZSEARCH_METHOD

CRITERIA = AcceptanceCriteria({"mnist": DatasetThresholds("A", 0.98, 0.25, 0.94, 0.75, 0.94)})


def whitebox(clean=99, undefended=10, vae=96, rec=97, e2e=98) -> EvalReport:
    report = EvalReport("whitebox")
    report.add(CLEAN_ATTACK, "mnist/A", "no_attack", clean, 100)
    report.add("fgsm", "mnist/A", "no_defense", undefended, 100)
    report.add("fgsm", "mnist/A", "vae", vae, 100)
    report.add("fgsm", "mnist/A", "vae_rec", rec, 100)
    report.add("fgsm", "mnist/A", "vae_e2e", e2e, 100)
    return report


def test_whitebox_within_thresholds():
    assert check_whitebox(whitebox(), CRITERIA) == []


def test_whitebox_violations_are_named():
    violations = check_whitebox(whitebox(clean=97, undefended=30, vae=93, rec=90, e2e=91), CRITERIA)
    text = "\n".join(violations)
    assert "clean accuracy of mnist/A is 97.00%" in text
    assert "undefended FGSM on mnist/A" in text
    assert "VAE-defended FGSM on mnist/A" in text
    assert "VAE exceeds REC" in text
    assert "E2E falls" in text
    assert "E2E gains only" in text


def test_blackbox_only_checks_the_configured_target():
    report = EvalReport("blackbox")
    report.add("fgsm", "mnist/A/B", "no_defense", 80, 100)
    report.add("fgsm", "mnist/A/B", "vae", 90, 100)
    report.add("fgsm", "mnist/C/B", "vae", 10, 100)
    assert len(check_blackbox(report, CRITERIA)) == 2


def test_leaveoneout_drop_and_recovery():
    report = EvalReport("leaveoneout")
    report.add("cw", "mnist/A", "vae", 95, 100)
    report.add("cw_heldout", "mnist/A", "vae", 60, 100)
    report.add("cw_heldout+deepfool", "mnist/A", "vae", 92, 100)
    assert check_leaveoneout(report, CRITERIA) == []
    report.rows[1].correct = 85
    report.rows[2].correct = 80
    assert len(check_leaveoneout(report, CRITERIA)) == 2


def speed(purify_s: float, base_s: float, doubled_s: float) -> EvalReport:
    report = EvalReport("speed")
    report.timings += [TimingRow(PURIFY_METHOD, 0, 1, 1000, purify_s), TimingRow(ZSEARCH_METHOD, 200, 10, 1000, base_s),
                       TimingRow(ZSEARCH_METHOD, 400, 10, 1000, doubled_s)]
    return report


def test_speed_thresholds():
    assert check_speed(speed(1.0, 50.0, 100.0), CRITERIA) == []
    assert any("faster" in v for v in check_speed(speed(1.0, 10.0, 20.0), CRITERIA))
    assert any("linear scaling" in v for v in check_speed(speed(1.0, 50.0, 200.0), CRITERIA))
    assert check_speed(EvalReport("speed"), CRITERIA) == []


def test_enforce_collects_every_violation():
    enforce_acceptance(CRITERIA, whitebox=whitebox(), speed=speed(1.0, 50.0, 100.0))
    with pytest.raises(AcceptanceError) as caught:
        enforce_acceptance(CRITERIA, whitebox=whitebox(clean=90), speed=speed(1.0, 10.0, 20.0))
    assert len(caught.value.violations) == 2


def test_e2e_gain_is_checked_on_fgsm_only():
    flat = whitebox(e2e=96)
    assert any("E2E gains only" in v for v in check_whitebox(flat, CRITERIA))
    flat.rows = [row for row in flat.rows if row.attack == CLEAN_ATTACK]
    flat.add("cw", "mnist/A", "vae", 80, 100)
    flat.add("cw", "mnist/A", "vae_e2e", 80, 100)
    assert not any("gains" in v for v in check_whitebox(flat, CRITERIA))
    relaxed = AcceptanceCriteria(CRITERIA.datasets, e2e_gain_min=None)
    assert check_whitebox(whitebox(e2e=96), relaxed) == []
