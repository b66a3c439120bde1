import dataclasses
import os

import numpy as np
import pytest

import app
from src.attacks.config import FGSM, RAND_FGSM
from src.data_io.checkpoints import save_checkpoint
from src.data_io.datasets import load_dataset
from src.data_io.images import read_pgm, write_pgm
from src.defense.bundle import MODE_REC, MODE_VAE, DefenseBundle
from src.manifest import Manifest
from src.models.classifiers import build_classifier
from src.models.vae import VaeSpec, build_vae
from src.modules.commands import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, ExperimentRunner, dispatch
from src.modules.config_parse import IDX_FILES, DeepfoolConfig, RunConfig
from tests.conftest import write_idx_images, write_idx_labels


@pytest.fixture
def config(tmp_path) -> RunConfig:
    raw = tmp_path / "raw"
    raw.mkdir()
    paths = {}
    for split, count in (("train", 4), ("test", 2)):
        images, labels = raw / IDX_FILES[split, "images"], raw / IDX_FILES[split, "labels"]
        write_idx_images(images, np.full((count, 28, 28), 200))
        write_idx_labels(labels, np.arange(count))
        paths[f"mnist_{split}_images"], paths[f"mnist_{split}_labels"] = str(images), str(labels)
    base = RunConfig()
    admin = dataclasses.replace(base.admin, output_dir=str(tmp_path / "out"), cache_dir=str(tmp_path / "cache"),
                                log_file=str(tmp_path / "logs" / "run.log"), threads=1, progress=False)
    return dataclasses.replace(base, admin=admin, data=dataclasses.replace(base.data, paths=paths))


def test_unknown_command_and_missing_image(config):
    assert dispatch("train-everything", config) == EXIT_CONFIG
    assert dispatch("purify-image", config) == EXIT_CONFIG


def test_prepare_data_writes_cache_and_manifest(config):
    assert dispatch("prepare-data", config) == EXIT_OK
    train = load_dataset(os.path.join(config.admin.cache_dir, "mnist_train.dvae"))
    assert len(train) == 4
    assert train.images.max() == pytest.approx(200 / 255.0)
    manifest = Manifest(os.path.join(config.admin.output_dir, "manifests"))
    assert manifest.get("data:mnist", "test").endswith("mnist_test.dvae")
    assert manifest.get("config:admin", "seed") == "0"


def test_prepare_data_skips_existing_cache_unless_forced(config):
    assert dispatch("prepare-data", config) == EXIT_OK
    cached = os.path.join(config.admin.cache_dir, "mnist_train.dvae")
    with open(cached, "wb") as handle:
        handle.write(b"stale")
    assert dispatch("prepare-data", config) == EXIT_OK
    with open(cached, "rb") as handle:
        assert handle.read() == b"stale"
    assert dispatch("prepare-data", config, force=True) == EXIT_OK
    assert len(load_dataset(cached)) == 4


def test_prepare_data_with_missing_idx_is_a_config_error(config):
    os.remove(config.data.paths["mnist_test_labels"])
    assert dispatch("prepare-data", config) == EXIT_CONFIG


def test_train_classifier_without_data_is_a_runtime_error(config):
    assert dispatch("train-classifier", config) == EXIT_RUNTIME


def test_purify_image(tmp_path, config):
    image = str(tmp_path / "digit.pgm")
    write_pgm(np.full((1, 28, 28), 0.5), image)
    assert dispatch("purify-image", config, image=str(tmp_path / "absent.pgm")) == EXIT_RUNTIME
    assert dispatch("purify-image", config, image=image) == EXIT_RUNTIME

    vae_path = os.path.join(config.admin.output_dir, "checkpoints", "mnist_all_vae.ckpt")
    os.makedirs(os.path.dirname(vae_path), exist_ok=True)
    save_checkpoint(build_vae(VaeSpec(latent_dim=config.vae.latent_dim)), vae_path)
    assert dispatch("purify-image", config, image=image) == EXIT_OK
    purified = read_pgm(str(tmp_path / "digit_purified.pgm"))
    assert purified.shape == (1, 28, 28)


def test_main_reports_config_errors(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    bad = tmp_path / "bad.cfg"
    bad.write_text("[attacks.fgsm]\neps = -0.1\n", encoding="utf-8")
    assert app.main(["prepare-data", "--config", str(bad)]) == EXIT_CONFIG
    good = tmp_path / "good.cfg"
    good.write_text("[admin]\nprogress = False\n", encoding="utf-8")
    assert app.main(["no-such-command", "--config", str(good)]) == EXIT_CONFIG


def test_main_usage_errors_use_the_config_exit_code(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert app.EXIT_USAGE == EXIT_CONFIG
    assert app.main(["eval-whitebox", "--precision", "16"]) == EXIT_CONFIG
    assert app.main(["eval-whitebox", "--threads", "abc"]) == EXIT_CONFIG
    assert app.main([]) == EXIT_CONFIG


def test_runner_reads_every_attack_section(config):
    config = dataclasses.replace(config, rand_fgsm=dataclasses.replace(config.rand_fgsm, eps=0.2),
                                 deepfool=DeepfoolConfig(max_iter=7, overshoot=0.05))
    runner = ExperimentRunner(config)
    attacks = runner._test_attacks()
    assert attacks[RAND_FGSM].eps == 0.2
    assert attacks[FGSM].eps == config.fgsm.eps
    deepfool = runner._deepfool_attack()
    assert (deepfool.max_iter, deepfool.overshoot, deepfool.seed) == (7, 0.05, config.admin.seed)


def test_finetuning_starts_from_the_rec_bundle(config):
    runner = ExperimentRunner(config)
    spec = VaeSpec(latent_dim=config.vae.latent_dim)
    classifier = build_classifier("E", 1, 10)
    save_checkpoint(classifier, runner.store.classifier_path("mnist", "E"))
    runner.store.save_vae(build_vae(spec), "mnist")
    assert runner._finetune_base("mnist", "E").mode == MODE_VAE

    runner.store.save_bundle(DefenseBundle(build_vae(spec, seed=1), classifier, MODE_REC, {"dataset": "mnist"}),
                             "mnist", "E")
    base = runner._finetune_base("mnist", "E")
    assert base.mode == MODE_REC
    assert base.provenance == {"dataset": "mnist"}
