import struct

import numpy as np
import pytest

from src.data_io.container import (ChecksumError, ContainerError, UnsupportedVersionError, read_container,
                                   write_container)
from src.data_io.datasets import (IDENTITY_TAG, LabeledDataset, PairedDataset, load_dataset, load_pairs,
                                  save_dataset, save_pairs)
from src.data_io.idx import (IMAGE_MAGIC, LABEL_MAGIC, DatasetConsistencyError, IdxFormatError, TruncatedFileError,
                             load_idx_dataset, read_idx_images)
from tests.conftest import write_idx_images, write_idx_labels


@pytest.fixture
def idx_pair(tmp_path):
    pixels = np.arange(3 * 28 * 28).reshape(3, 28, 28) % 256
    images, labels = tmp_path / "train-images-idx3-ubyte", tmp_path / "train-labels-idx1-ubyte"
    write_idx_images(images, pixels)
    write_idx_labels(labels, np.array([7, 0, 9]))
    return images, labels, pixels


def test_load_idx_scales_pixels(idx_pair):
    images, labels, pixels = idx_pair
    ds = load_idx_dataset(str(images), str(labels), name="mnist", split="train")
    assert ds.images.shape == (3, 1, 28, 28)
    assert ds.images.dtype == np.float32
    np.testing.assert_allclose(ds.images[:, 0], pixels / 255.0, rtol=1e-6)
    np.testing.assert_array_equal(ds.labels, [7, 0, 9])


def test_idx_magic_mismatch(tmp_path):
    path = tmp_path / "bad"
    write_idx_images(path, np.zeros((1, 28, 28)), magic=LABEL_MAGIC)
    with pytest.raises(IdxFormatError, match="magic"):
        read_idx_images(str(path))


def test_idx_truncated_payload_reports_offset(tmp_path):
    path = tmp_path / "short"
    path.write_bytes(struct.pack(">4I", IMAGE_MAGIC, 2, 28, 28) + bytes(100))
    with pytest.raises(TruncatedFileError, match="offset 16"):
        read_idx_images(str(path))


def test_idx_count_mismatch(tmp_path, idx_pair):
    images, _, _ = idx_pair
    labels = tmp_path / "labels"
    write_idx_labels(labels, np.array([1, 2]))
    with pytest.raises(DatasetConsistencyError):
        load_idx_dataset(str(images), str(labels))


def test_idx_wrong_dimensions(idx_pair):
    images, labels, _ = idx_pair
    with pytest.raises(IdxFormatError):
        load_idx_dataset(str(images), str(labels), expected_dims=(32, 32))


def test_idx_missing_file(tmp_path, idx_pair):
    _, labels, _ = idx_pair
    with pytest.raises(FileNotFoundError):
        load_idx_dataset(str(tmp_path / "nope"), str(labels))


def test_container_round_trip_keeps_dtypes(tmp_path):
    path = str(tmp_path / "blob.dvae")
    arrays = {"a": np.arange(6, dtype=np.int64).reshape(2, 3), "b": np.linspace(0, 1, 4, dtype=np.float32)}
    write_container(path, "dataset", {"note": "x"}, arrays)
    metadata, loaded = read_container(path, "dataset")
    assert metadata == {"note": "x"}
    for name, array in arrays.items():
        assert loaded[name].dtype == array.dtype
        np.testing.assert_array_equal(loaded[name], array)


def test_container_detects_corruption(tmp_path):
    path = tmp_path / "blob.dvae"
    write_container(str(path), "dataset", {}, {"a": np.ones(16, dtype=np.float32)})
    blob = bytearray(path.read_bytes())
    blob[-10] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        read_container(str(path), "dataset")


def test_container_rejects_other_version_and_kind(tmp_path):
    path = tmp_path / "blob.dvae"
    write_container(str(path), "dataset", {}, {"a": np.ones(2)})
    with pytest.raises(ContainerError, match="holds 'dataset'"):
        read_container(str(path), "pairs")
    blob = bytearray(path.read_bytes())
    blob[8:12] = struct.pack("<I", 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedVersionError):
        read_container(str(path), "dataset")


def test_container_rejects_foreign_file(tmp_path):
    path = tmp_path / "plain.txt"
    path.write_text("hello world, not a container")
    with pytest.raises(ContainerError):
        read_container(str(path), "dataset")


def test_labeled_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.full((2, 1, 4, 4), 1.5, dtype=np.float32), np.array([0, 1]))
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 1, 4, 4), dtype=np.float32), np.array([0, 10]))
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((0, 1, 4, 4), dtype=np.float32), np.zeros(0))


def test_dataset_round_trip(tmp_path, toy_train):
    path = str(tmp_path / "toy_train.dvae")
    save_dataset(toy_train, path)
    loaded = load_dataset(path)
    assert (loaded.name, loaded.split, loaded.num_classes) == ("toy", "train", 2)
    np.testing.assert_array_equal(loaded.images, toy_train.images)


def make_pairs(rows: int = 4) -> PairedDataset:
    clean = np.full((rows, 1, 4, 4), 0.5, dtype=np.float32)
    adversarial = np.clip(clean + 0.1 * (np.arange(rows)[:, None, None, None] % 2), 0, 1).astype(np.float32)
    return PairedDataset(adversarial, clean, np.arange(rows) % 2, np.arange(rows) % 2,
                         ["FGSM(eps=0.3)", IDENTITY_TAG])


def test_pairs_round_trip_with_provenance(tmp_path):
    pd = make_pairs()
    path = str(tmp_path / "pairs.dvae")
    save_pairs(pd, path, {"seed": 3})
    loaded = load_pairs(path)
    assert loaded.tags == pd.tags
    assert loaded.tag_of(1) == IDENTITY_TAG
    assert loaded.counts() == {"FGSM(eps=0.3)": 2, IDENTITY_TAG: 2}
    np.testing.assert_array_equal(loaded.adversarial, pd.adversarial)
    assert loaded.metadata == {"seed": 3}
    save_pairs(loaded, path, {"arch": "A"})
    assert load_pairs(path).metadata == {"seed": 3, "arch": "A"}


def test_pairs_reject_bad_provenance():
    pd = make_pairs()
    with pytest.raises(ValueError):
        PairedDataset(pd.adversarial, pd.clean, pd.labels, np.full(4, 5), pd.tags)
    with pytest.raises(ValueError):
        PairedDataset(pd.adversarial[:2], pd.clean, pd.labels, pd.provenance, pd.tags)


def test_pairs_select_families_and_concatenate():
    first = make_pairs()
    second = PairedDataset(first.adversarial, first.clean, first.labels, np.zeros(4), ["CW_L2(lr=10)"])
    merged = PairedDataset.concatenate([first, second])
    assert merged.tags == ["FGSM(eps=0.3)", IDENTITY_TAG, "CW_L2(lr=10)"]
    assert len(merged) == 8
    only_cw = merged.select_families(["CW_L2"])
    assert only_cw.counts() == {"FGSM(eps=0.3)": 0, IDENTITY_TAG: 2, "CW_L2(lr=10)": 4}
    assert merged.select_families(["CW_L2"], keep_identity=False).counts()[IDENTITY_TAG] == 0
