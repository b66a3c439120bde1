import numpy as np
import pytest

from src.autodiff.functional import cross_entropy_logits
from src.autodiff.gradcheck import grad_check
from src.autodiff.random import rng_stream
from src.autodiff.tensor import Tensor, no_grad
from src.data_io.checkpoints import ArchitectureMismatchError, load_checkpoint, save_checkpoint
from src.models.classifiers import UnknownArchitectureError, accuracy, build_classifier, predict_probabilities
from src.models.layers import DescriptorError, layer_kinds, parse_row, render_rows
from src.models.network import Network
from src.models.training import TrainConfig, TrainingDivergedError, ensure_finite, split_holdout, train_classifier
from src.models.vae import VaeSpec, build_vae, vae_elbo_loss, vae_forward
from tests.conftest import TOY_SIDE


def test_parse_row_keeps_joiners():
    specs = parse_row("FC1(4096, 128), FC2(4096, 128)")
    assert [s.kind for s in specs] == ["FC1", "FC2"]
    assert render_rows(specs) == ["FC1(4096, 128), FC2(4096, 128)"]
    assert render_rows(parse_row("Conv(*, 64, 5, 1, 2) + BN + ReLU")) == ["Conv(*, 64, 5, 1, 2) + BN + ReLU"]


@pytest.mark.parametrize("row", ["Pool(2)", "Conv(1, 2, 3)", "Dropout(1.5)", "FC(x)", "FC(10"])
def test_parse_row_rejects_malformed(row):
    with pytest.raises(DescriptorError):
        parse_row(row)


def test_classifier_e_parameter_count():
    assert build_classifier("E").parameter_count() == 199210


def test_classifier_d_layer_kinds():
    model = build_classifier("d")
    assert layer_kinds(model.specs) == ["FC(200)", "ReLU", "Dropout(0.5)", "FC(200)", "ReLU", "Dropout(0.25)",
                                        "FC(10)", "Softmax"]


@pytest.mark.parametrize("arch", ["A", "B", "C", "D", "E"])
def test_classifiers_emit_logits_per_class(arch):
    model = build_classifier(arch, seed=1)
    assert model.output_shape == (10,)
    with no_grad():
        logits = model.forward(Tensor(np.zeros((2, 1, 28, 28))))
    assert logits.shape == (2, 10)


def test_unknown_architecture():
    with pytest.raises(UnknownArchitectureError):
        build_classifier("F")


def test_build_is_seeded():
    first, second = build_classifier("E", seed=4), build_classifier("E", seed=4)
    other = build_classifier("E", seed=5)
    for name, p in first.parameters().items():
        np.testing.assert_array_equal(p.data, second.parameters()[name].data)
    assert not np.array_equal(first.parameters()["00_fc.weight"].data, other.parameters()["00_fc.weight"].data)


def test_probabilities_sum_to_one(toy_test):
    model = build_classifier("E", num_classes=2, image_size=(TOY_SIDE, TOY_SIDE))
    np.testing.assert_allclose(predict_probabilities(model, toy_test.images).sum(axis=1), 1.0, rtol=1e-5)


def test_dropout_active_only_in_training():
    model = build_classifier("D", seed=0)
    x = Tensor(rng_stream(0, "x").random((3, 1, 28, 28)))
    with no_grad():
        eval_a, eval_b = model.forward(x).data, model.forward(x).data
        train = model.forward(x, training=True, rng=rng_stream(0, "drop")).data
    np.testing.assert_array_equal(eval_a, eval_b)
    assert not np.allclose(eval_a, train)


def test_network_gradients_check_out():
    model = Network.from_rows(["Conv(*, 2, 3, 2, 1) + ReLU", "FC(3)"], (1, 6, 6), 1, name="tiny", seed=0)
    x = rng_stream(1, "x").random((2, 1, 6, 6))
    labels = np.array([0, 2])

    def loss():
        return cross_entropy_logits(model.forward(Tensor(x)), labels)

    report = grad_check(loss, model.parameters(), samples=10)
    assert report.passed, report.max_rel_error


def test_training_learns_separable_toy_data(toy_classifier, toy_test):
    correct, total = accuracy(toy_classifier, toy_test.images, toy_test.labels)
    assert correct / total >= 0.9
    assert toy_classifier.metadata["seed"] == 0


def test_training_is_reproducible(toy_train):
    cfg = TrainConfig(epochs=1, batch_size=30, seed=3, holdout=0, progress=False)
    runs = []
    for _ in range(2):
        model = build_classifier("D", num_classes=2, seed=3, image_size=(TOY_SIDE, TOY_SIDE))
        runs.append(train_classifier(model, toy_train, cfg, name="repro")[0])
    for name, p in runs[0].parameters().items():
        np.testing.assert_array_equal(p.data, runs[1].parameters()[name].data)


def test_training_needs_train_split(toy_test):
    model = build_classifier("E", num_classes=2, image_size=(TOY_SIDE, TOY_SIDE))
    with pytest.raises(ValueError, match="train split"):
        train_classifier(model, toy_test, TrainConfig(progress=False))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)


def test_diverged_loss_raises():
    with pytest.raises(TrainingDivergedError):
        ensure_finite(float("nan"), "test")


def test_split_holdout_skips_small_sets():
    train, held = split_holdout(100, 10, seed=0)
    assert len(train) == 90 and len(held) == 10
    assert not set(train) & set(held)
    train, held = split_holdout(100, 60, seed=0)
    assert len(train) == 100 and len(held) == 0


def test_checkpoint_round_trip(tmp_path, toy_classifier, toy_test):
    path = str(tmp_path / "toy_E.ckpt")
    save_checkpoint(toy_classifier, path, {"dataset": "toy"})
    fresh = build_classifier("E", num_classes=2, seed=9, image_size=(TOY_SIDE, TOY_SIDE))
    loaded = load_checkpoint(path, fresh)
    assert loaded.metadata["dataset"] == "toy"
    np.testing.assert_array_equal(predict_probabilities(loaded, toy_test.images),
                                  predict_probabilities(toy_classifier, toy_test.images))


def test_checkpoint_mismatch_names_first_differing_layer(tmp_path):
    path = str(tmp_path / "E.ckpt")
    save_checkpoint(build_classifier("E"), path)
    with pytest.raises(ArchitectureMismatchError, match="layer row 2.*'FC\\(200\\)'.*'Dropout\\(0.5\\)'"):
        load_checkpoint(path, build_classifier("D"))
    with pytest.raises(ArchitectureMismatchError, match="VAE"):
        load_checkpoint(path, build_vae())


def test_vae_encoder_flattens_to_4096():
    vae = build_vae()
    assert vae.encoder.output_shape == (256, 4, 4)
    assert vae.mu_head.layers[0].kind == "flatten"
    assert vae.mu_head.layers[0].shape == (4096,)


def test_vae_decoder_path_shapes():
    vae = build_vae()
    x = Tensor(np.zeros((2, 128)))
    shapes = []
    with no_grad():
        for layer in vae.decoder.layers:
            x = layer.forward(x, False, None)
            if layer.kind in ("fc", "unflatten", "convt", "conv"):
                shapes.append(tuple(x.shape[1:]))
    assert shapes == [(4096,), (256, 4, 4), (128, 8, 8), (64, 16, 16), (64, 28, 28), (64, 28, 28), (1, 28, 28)]
    assert 0.0 <= x.data.min() and x.data.max() <= 1.0


def test_vae_forward_and_elbo(toy_vae_spec, toy_test):
    vae = build_vae(toy_vae_spec, seed=0)
    x = Tensor(toy_test.images[:4])
    with no_grad():
        deterministic = vae_forward(vae, x)
        sampled = vae_forward(vae, x, noise=3, training=True)
        loss = vae_elbo_loss(sampled.mu, sampled.logvar, sampled.x_rec, toy_test.images[:4])
    np.testing.assert_array_equal(deterministic.z.data, deterministic.mu.data)
    assert sampled.x_rec.shape == (4, 1, TOY_SIDE, TOY_SIDE)
    assert loss.kl.item() >= 0.0
    assert loss.total.item() == pytest.approx(loss.reconstruction.item() + loss.kl.item(), rel=1e-5)


def test_vae_spec_validation():
    with pytest.raises(ValueError):
        VaeSpec(likelihood="poisson")
    with pytest.raises(ValueError):
        VaeSpec(latent_dim=0)


def test_vae_gradients_check_out(toy_vae_spec, toy_test):
    vae = build_vae(toy_vae_spec, seed=1)
    x = toy_test.images[:3]
    eps = rng_stream(0, "eps").standard_normal((3, toy_vae_spec.latent_dim))

    def loss():
        out = vae_forward(vae, Tensor(x), training=True, eps=eps)
        return vae_elbo_loss(out.mu, out.logvar, out.x_rec, x).total

    params = {name: p for name, p in vae.parameters().items() if name.startswith(("mu.", "logvar.", "decoder."))}
    report = grad_check(loss, params, samples=6, tolerance=1e-3)
    assert report.passed, report.max_rel_error
