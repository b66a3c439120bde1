import numpy as np
import pytest

from src.attacks.config import CW_L2, DEEPFOOL, FGSM, RAND_FGSM, AttackConfig
from src.attacks.corpus import generate_attack_corpus
from src.defense.bundle import MODE_VAE, DefenseBundle
from src.evaluation.blackbox import (BlackboxSetup, BlackboxSetupError, jacobian_augment, run_blackbox_suite,
                                     split_queries)
from src.evaluation.harness import (LeaveOneOutSetup, SuiteOptions, WhiteboxCell, attack_slice, deepfool_pairs,
                                    eval_accuracy, run_leaveoneout_suite, run_whitebox_suite)
from src.evaluation.report import CLEAN_ATTACK
from src.evaluation.speed import PURIFY_METHOD, ZSEARCH_METHOD, run_speed_bench
from src.models.training import TrainConfig
from src.models.vae import build_vae

OPTIONS = SuiteOptions(batch_size=16, threads=1, cw_subset=10, seed=0, progress=False)


def test_eval_accuracy_with_and_without_preprocess(toy_classifier, toy_test):
    x, y = toy_test.images, toy_test.labels
    plain = eval_accuracy(toy_classifier, x, y)
    assert plain >= 0.9
    assert eval_accuracy(toy_classifier, x, y, preprocess=lambda images: images) == plain
    # blank images all land in one class, half of the toy labels
    assert eval_accuracy(toy_classifier, x, y, preprocess=np.zeros_like) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        eval_accuracy(toy_classifier, x, y[:-1])


def test_cw_rows_use_a_seeded_slice(toy_test):
    cw = attack_slice(toy_test, AttackConfig(CW_L2), OPTIONS)
    assert len(cw) == 10
    np.testing.assert_array_equal(cw.images, attack_slice(toy_test, AttackConfig(CW_L2), OPTIONS).images)
    assert len(attack_slice(toy_test, AttackConfig(FGSM), OPTIONS)) == len(toy_test)


def test_whitebox_suite_fills_every_cell(toy_vae_spec, toy_classifier, toy_test):
    bundle = DefenseBundle(build_vae(toy_vae_spec, seed=0), toy_classifier, MODE_VAE)
    cell = WhiteboxCell("toy", "E", toy_test, toy_classifier, {MODE_VAE: bundle})
    attacks = [AttackConfig(FGSM, eps=0.5), AttackConfig(CW_L2, steps=3, lr=50.0)]
    report = run_whitebox_suite([cell], attacks, OPTIONS)
    assert report.cell(CLEAN_ATTACK, "toy/E", "no_attack") >= 0.9
    assert report.cell(CLEAN_ATTACK, "toy/E", "vae") is not None
    assert report.cell("fgsm", "toy/E", "no_defense") < report.cell("fgsm", "toy/E", "no_attack")
    assert report.cell("fgsm", "toy/E", "vae") is not None
    cw_rows = [row for row in report.rows if row.attack == "cw"]
    assert cw_rows and all(row.n_examples == 10 for row in cw_rows)
    assert report.metadata["attack:fgsm"] == "FGSM(eps=0.5)"
    assert "vae" in report.averages()


def test_leaveoneout_suite_rows(toy_vae_spec, toy_classifier, toy_train, toy_test):
    train = toy_train.head(24)
    suite = [AttackConfig(FGSM, eps=0.3), AttackConfig(RAND_FGSM, eps=0.3, alpha=0.05),
             AttackConfig(CW_L2, steps=2, lr=50.0)]
    corpus = generate_attack_corpus(train, toy_classifier, suite, batch_size=8, progress=False)
    schedule = TrainConfig(epochs=1, batch_size=24, lr=5e-3, holdout=0, progress=False)
    setup = LeaveOneOutSetup("toy", "E", train, toy_test, toy_classifier, corpus, toy_vae_spec, schedule, schedule)
    report = run_leaveoneout_suite(setup, {FGSM: suite[0]}, held_out=(FGSM,), modes=(MODE_VAE,), options=OPTIONS)
    for row in ("fgsm_heldout", "fgsm_heldout+deepfool"):
        assert report.cell(row, "toy/E", "no_defense") is not None
        assert report.cell(row, "toy/E", "vae") is not None
    assert report.cell("fgsm", "toy/E", "vae") is None
    with pytest.raises(ValueError):
        run_leaveoneout_suite(setup, {FGSM: suite[0]}, held_out=("DEEPFOOL",), options=OPTIONS)


def test_deepfool_pairs_follow_the_given_config(toy_classifier, toy_train, toy_test):
    train = toy_train.head(8)
    corpus = generate_attack_corpus(train, toy_classifier, [AttackConfig(FGSM)], batch_size=8, progress=False)
    setup = LeaveOneOutSetup("toy", "E", train, toy_test, toy_classifier, corpus)
    pairs = deepfool_pairs(setup, OPTIONS, AttackConfig(DEEPFOOL, max_iter=3, overshoot=0.05))
    assert len(pairs) == 8
    assert pairs.counts()["DEEPFOOL(overshoot=0.05)"] == 8
    with pytest.raises(ValueError):
        deepfool_pairs(setup, OPTIONS, AttackConfig(FGSM))


def test_blackbox_excludes_query_images(toy_vae_spec, toy_classifier, toy_test):
    setup = BlackboxSetup(target="E", substitute="E", queries=10, rounds=2, epochs=2, eps=0.3)
    queries, evaluation = split_queries(toy_test, setup)
    assert len(queries) == 10 and len(evaluation) == 30
    assert not set(queries) & set(evaluation)
    bundles = {"E": {MODE_VAE: DefenseBundle(build_vae(toy_vae_spec), toy_classifier)}}
    report = run_blackbox_suite([setup], "toy", toy_test, {"E": toy_classifier}, bundles, OPTIONS)
    rows = [row for row in report.rows if row.classifier == "toy/E/E"]
    assert {row.mode for row in rows} == {"no_attack", "no_defense", "vae"}
    assert all(row.n_examples == 30 for row in rows)
    assert 0.0 <= float(report.metadata["substitute_agreement:toy/E/E"]) <= 1.0


def test_blackbox_setup_validation():
    with pytest.raises(BlackboxSetupError):
        BlackboxSetup(substitute="A")
    with pytest.raises(BlackboxSetupError):
        BlackboxSetup(queries=0)


def test_jacobian_augment_moves_by_step(toy_classifier, toy_test):
    x = toy_test.images[:5]
    out = jacobian_augment(toy_classifier, x, toy_test.labels[:5], 0.1)
    assert out.shape == x.shape
    assert np.abs(out - x).max() <= 0.1 + 1e-6


def test_speed_bench_rows(toy_vae_spec, toy_classifier, toy_test):
    bundle = DefenseBundle(build_vae(toy_vae_spec), toy_classifier)
    report = run_speed_bench(bundle, toy_test.images[:8], toy_test.labels[:8], configs=((2, 1), (4, 1)))
    assert [(row.method, row.steps, row.restarts) for row in report.timings] == [
        (PURIFY_METHOD, 0, 1), (ZSEARCH_METHOD, 2, 1), (ZSEARCH_METHOD, 4, 1)]
    assert all(row.n_images == 8 and row.wall_time_s >= 0.0 for row in report.timings)
    assert all(0.0 <= row.accuracy <= 1.0 for row in report.timings)
    assert report.metadata["threads"] == "1"
