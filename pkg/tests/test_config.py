import dataclasses

import pytest

from src.modules.config_parse import DATA_DIR_ENV, ConfigError, RunConfig, load_config


@pytest.fixture(autouse=True)
def no_data_dir_override(monkeypatch):
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)


def write_config(tmp_path, text: str) -> str:
    path = tmp_path / "config.cfg"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_missing_keys_take_defaults(tmp_path):
    config = load_config(write_config(tmp_path, "[admin]\nthreads = 2\n"))
    assert config.admin.seed == 0
    assert config.admin.threads == 2
    assert config.fgsm.eps == 0.3
    assert config.rand_fgsm.alpha == 0.05
    assert config.data.datasets == ("mnist",)
    assert config.thresholds["mnist"].clean_min == 0.98


def test_negative_eps_names_key_and_line(tmp_path):
    path = write_config(tmp_path, "[admin]\nseed = 1\n\n[attacks.fgsm]\neps = -0.1\n")
    with pytest.raises(ConfigError, match=r"attacks\.fgsm\.eps \(line 5\)"):
        load_config(path)


@pytest.mark.parametrize("text,message", [
    ("[vae]\nbogus = 1\n", r"vae\.bogus \(line 2\): unknown key"),
    ("[admin]\nseed = 0\n[extra]\nx = 1\n", r"\[extra\] \(line 3\): unknown section"),
    ("[classifier]\narchs = A, F\n", r"classifier\.archs \(line 2\): 'F' is not one of"),
    ("[admin]\nseed = abc\n", r"admin\.seed \(line 2\): expected int"),
    ("[attacks.rand_fgsm]\neps = 0.1\nalpha = 0.2\n", r"attacks\.rand_fgsm\.alpha \(line 3\): alpha must be below"),
    ("[data]\ndatasets = mnist\nkmnist_train_images = x\n", r"data\.kmnist_train_images \(line 3\): unknown key"),
    ("[evaluation]\nmodes = VAE, PGD\n", r"evaluation\.modes"),
    ("[admin]\nprecision = 16\n", r"admin\.precision"),
])
def test_invalid_values_are_rejected(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message):
        load_config(write_config(tmp_path, text))


def test_explicit_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(str(tmp_path / "absent.cfg"))


def test_resolved_config_reloads_equal(tmp_path):
    text = ("[admin]\nseed = 7\nthreads = 3\n\n[data]\ndatasets = mnist, fmnist\n"
            "mnist_test_labels = /tmp/labels\n\n[acceptance.fmnist]\nblackbox_undefended_max =\n")
    config = load_config(write_config(tmp_path, text))
    resolved = tmp_path / "resolved.cfg"
    with open(resolved, "w", encoding="utf-8") as handle:
        config.to_parser().write(handle)
    assert load_config(str(resolved)) == config
    assert config.data.idx_path("mnist", "test", "labels") == "/tmp/labels"
    assert config.thresholds["fmnist"].blackbox_undefended_max is None


def test_data_dir_environment_override(tmp_path, monkeypatch):
    monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path / "cache"))
    config = load_config(write_config(tmp_path, "[admin]\ncache_dir = elsewhere\n"))
    assert config.admin.cache_dir == str(tmp_path / "cache")


def test_overrides_are_validated():
    config = RunConfig().with_overrides(seed=7, output_dir="out")
    assert (config.admin.seed, config.admin.output_dir) == (7, "out")
    assert RunConfig().with_overrides().admin == RunConfig().admin
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(threads=0)


def test_validate_paths_names_the_missing_file(tmp_path):
    paths = {f"mnist_{split}_{kind}": str(tmp_path / f"{split}-{kind}")
             for split in ("train", "test") for kind in ("images", "labels")}
    config = dataclasses.replace(RunConfig(), data=dataclasses.replace(RunConfig().data, paths=paths))
    with pytest.raises(ConfigError, match="data.mnist_train_images"):
        config.validate_paths()
    for path in paths.values():
        open(path, "wb").close()
    config.validate_paths()


def test_criteria_follow_thresholds(tmp_path):
    config = load_config(write_config(tmp_path, "[acceptance]\nspeedup_min = 10\n"))
    criteria = config.criteria()
    assert criteria.speedup_min == 10.0
    assert set(criteria.datasets) == {"mnist"}
