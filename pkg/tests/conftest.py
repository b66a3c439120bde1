import struct

import numpy as np
import pytest

from src.autodiff.random import rng_stream
from src.autodiff.tensor import precision
from src.data_io.datasets import LabeledDataset
from src.data_io.idx import IMAGE_MAGIC, LABEL_MAGIC
from src.models.classifiers import build_classifier
from src.models.training import TrainConfig, train_classifier
from src.models.vae import VaeSpec

TOY_SIDE = 8

# 1x8x8 images: one 4x4 map of stride-2 conv features, unflattened back by the decoder
TOY_VAE_SPEC = VaeSpec(
    encoder_rows=("Conv(*, 4, 4, 2, 1) + BN + ReLU",),
    head_row="FC1(64, 6), FC2(64, 6)",
    decoder_rows=("FC(6, 64) + ReLU", "ConvT(4, 4, 4, 2, 1) + BN + ReLU", "Conv(4, *, 1, 1, 0) + Sigmoid"),
    latent_dim=6,
    image_shape=(1, TOY_SIDE, TOY_SIDE),
)


def make_toy_dataset(count: int = 120, split: str = "train", seed: int = 0) -> LabeledDataset:
    """Two classes: bright top half (0) or bright bottom half (1), on light noise."""
    rng = rng_stream(seed, "toy", split)
    labels = np.arange(count) % 2
    images = rng.uniform(0.0, 0.2, size=(count, 1, TOY_SIDE, TOY_SIDE))
    half = TOY_SIDE // 2
    images[labels == 0, :, :half, :] += 0.7
    images[labels == 1, :, half:, :] += 0.7
    return LabeledDataset(np.clip(images, 0.0, 1.0).astype(np.float32), labels, name="toy", split=split,
                          num_classes=2)


@pytest.fixture
def float64():
    with precision(64):
        yield


@pytest.fixture
def toy_train() -> LabeledDataset:
    return make_toy_dataset(120, "train")


@pytest.fixture
def toy_test() -> LabeledDataset:
    return make_toy_dataset(40, "test", seed=1)


@pytest.fixture
def toy_classifier(toy_train):
    model = build_classifier("E", in_channels=1, num_classes=2, seed=0, image_size=(TOY_SIDE, TOY_SIDE))
    cfg = TrainConfig(epochs=8, batch_size=20, lr=2e-3, seed=0, holdout=0, progress=False)
    model, _ = train_classifier(model, toy_train, cfg, name="toy_E")
    return model


@pytest.fixture
def toy_vae_spec() -> VaeSpec:
    return TOY_VAE_SPEC


def write_idx_images(path, pixels: np.ndarray, magic: int = IMAGE_MAGIC) -> None:
    count, rows, cols = pixels.shape
    path.write_bytes(struct.pack(">4I", magic, count, rows, cols) + pixels.astype(np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    path.write_bytes(struct.pack(">2I", LABEL_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes())
