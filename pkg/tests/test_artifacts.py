import csv
import os

import numpy as np
import pytest

from src.attacks.config import FGSM, AttackConfig
from src.data_io.images import read_pgm
from src.defense.bundle import MODE_REC, MODE_VAE, DefenseBundle, MissingArtifactError
from src.defense.pipeline import FinetuneCurve, purify
from src.defense.zsearch import ZSearchConfig
from src.evaluation.artifacts import (FINETUNE_HEADER, collect_grid_samples, emit_artifacts, write_finetune_curve,
                                      write_grid)
from src.evaluation.report import EvalReport, TimingRow
from src.evaluation.store import ArtifactStore
from src.manifest import Manifest
from src.models.vae import build_vae
from tests.conftest import TOY_SIDE


@pytest.fixture
def store(tmp_path) -> ArtifactStore:
    return ArtifactStore(str(tmp_path / "out"), str(tmp_path / "cache"), Manifest(str(tmp_path / "out" / "manifests")))


def test_finetune_curve_csv(tmp_path):
    path = str(tmp_path / "curve.csv")
    write_finetune_curve(FinetuneCurve([0, 1, 2], [0.5, 0.75, 0.9], [1.25, 1.0]), path)
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows == [FINETUNE_HEADER, ["0", "50.00", ""], ["1", "75.00", "1.250000"], ["2", "90.00", "1.000000"]]


def test_grid_has_four_rows_of_samples(tmp_path, toy_vae_spec, toy_classifier, toy_test):
    bundle = DefenseBundle(build_vae(toy_vae_spec), toy_classifier)
    samples = collect_grid_samples(bundle, toy_test.images, toy_test.labels, AttackConfig(FGSM),
                                   ZSearchConfig(steps=2, restarts=1), count=5)
    assert all(row.shape == (5, 1, TOY_SIDE, TOY_SIDE) for row in samples)
    path = str(tmp_path / "grid.pgm")
    write_grid(samples, path)
    assert read_pgm(path).shape == (1, 4 * TOY_SIDE + 3, 5 * TOY_SIDE + 4)


def test_emit_artifacts_writes_reports_and_manifest(store):
    accuracy = EvalReport("whitebox", metadata={"seed": "0"}, with_average=True)
    accuracy.add("fgsm", "mnist/A", "vae", 9, 10)
    timing = EvalReport("speed")
    timing.timings.append(TimingRow("defense_vae", 0, 1, 10, 0.1))
    written = emit_artifacts([accuracy, timing], store)
    assert [os.path.basename(p) for p in written] == ["whitebox.csv", "speed_timing.csv"]
    assert all(os.path.exists(p) for p in written)
    assert store.manifest.get("report:whitebox", "seed") == "0"
    assert store.manifest.get("artifacts", "files") == ", ".join(written)
    with pytest.raises(ValueError):
        emit_artifacts([EvalReport("empty")], store)


def test_store_names_the_missing_producer(store):
    with pytest.raises(MissingArtifactError, match="prepare-data"):
        store.load_dataset("mnist", "train")
    with pytest.raises(MissingArtifactError, match="train-classifier"):
        store.load_bundle("mnist", "A", MODE_VAE)
    with pytest.raises(MissingArtifactError, match="retrain-rec"):
        store.load_bundle("mnist", "A", MODE_REC)


def test_store_bundle_round_trip(store, toy_vae_spec, toy_classifier, toy_test):
    bundle = DefenseBundle(build_vae(toy_vae_spec, seed=3), toy_classifier, MODE_REC, {"dataset": "toy"})
    store.save_bundle(bundle, "toy", "E")
    loaded = store.load_bundle("toy", "E", MODE_REC, toy_vae_spec)
    assert loaded.mode == MODE_REC
    assert loaded.provenance == {"dataset": "toy"}
    np.testing.assert_array_equal(purify(loaded.vae, toy_test.images), purify(bundle.vae, toy_test.images))
