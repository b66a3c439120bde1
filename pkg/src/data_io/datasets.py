"""
In-memory datasets and the adversarial pair corpus file.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.data_io.container import read_container, write_container

logger = logging.getLogger(__name__)

PAIRS_FORMAT = "pairs"
IDENTITY_TAG = "IDENTITY"


def _check_pixels(images: np.ndarray, what: str) -> None:
    if images.ndim != 4:
        raise ValueError(f"{what} must be (N, C, H, W), got {images.shape}")
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ValueError(f"{what} pixels must lie in [0, 1]")


@dataclass
class LabeledDataset:
    """
    Images in [0, 1] with integer labels.

    Attributes:
        images: float32 array (N, C, H, W)
        labels: int64 array (N,)
        name: dataset name, e.g. 'mnist' or 'fmnist'
        split: 'train' or 'test'
        num_classes: label range
    """
    images: np.ndarray
    labels: np.ndarray
    name: str = "mnist"
    split: str = "train"
    num_classes: int = 10

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        _check_pixels(self.images, "images")
        if self.images.shape[0] == 0:
            raise ValueError("dataset is empty")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(f"{self.images.shape[0]} images but labels have shape {self.labels.shape}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[indices], self.labels[indices], self.name, self.split, self.num_classes)

    def head(self, count: int) -> "LabeledDataset":
        return self.subset(np.arange(min(count, len(self))))


@dataclass
class PairedDataset:
    """
    (adversarial, clean) image pairs for Defense-VAE training.

    Attributes:
        adversarial: float32 array (M, C, H, W)
        clean: float32 array (M, C, H, W), rows taken from the source dataset
        labels: int64 array (M,)
        provenance: per-row index into tags
        tags: distinct provenance strings, e.g. 'FGSM(eps=0.35)' or 'IDENTITY'
        metadata: free-form corpus facts (dataset, source arch, seed) kept in the file header
    """
    adversarial: np.ndarray
    clean: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray
    tags: List[str] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.provenance = np.asarray(self.provenance, dtype=np.int64)
        if self.adversarial.shape != self.clean.shape:
            raise ValueError(f"adversarial {self.adversarial.shape} and clean {self.clean.shape} differ")
        _check_pixels(self.adversarial, "adversarial")
        _check_pixels(self.clean, "clean")
        rows = self.adversarial.shape[0]
        if self.labels.shape != (rows,) or self.provenance.shape != (rows,):
            raise ValueError("labels and provenance need one entry per pair")
        if rows and (self.provenance.min() < 0 or self.provenance.max() >= len(self.tags)):
            raise ValueError("provenance index outside the tag table")

    def __len__(self) -> int:
        return self.adversarial.shape[0]

    def tag_of(self, row: int) -> str:
        return self.tags[self.provenance[row]]

    def counts(self) -> Dict[str, int]:
        return {tag: int(np.sum(self.provenance == i)) for i, tag in enumerate(self.tags)}

    def subset(self, indices: Sequence[int]) -> "PairedDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return PairedDataset(self.adversarial[indices], self.clean[indices], self.labels[indices],
                             self.provenance[indices], list(self.tags))

    def select_families(self, families: Sequence[str], keep_identity: bool = True) -> "PairedDataset":
        """Keep rows whose tag belongs to one of the attack families (plus identity rows)."""
        wanted = [i for i, tag in enumerate(self.tags)
                  if tag.split("(")[0] in families or (keep_identity and tag == IDENTITY_TAG)]
        return self.subset(np.flatnonzero(np.isin(self.provenance, wanted)))

    @staticmethod
    def concatenate(parts: Sequence["PairedDataset"]) -> "PairedDataset":
        tags: List[str] = []
        provenance = []
        for part in parts:
            remap = []
            for tag in part.tags:
                if tag not in tags:
                    tags.append(tag)
                remap.append(tags.index(tag))
            provenance.append(np.asarray(remap, dtype=np.int64)[part.provenance])
        return PairedDataset(np.concatenate([p.adversarial for p in parts]),
                             np.concatenate([p.clean for p in parts]),
                             np.concatenate([p.labels for p in parts]),
                             np.concatenate(provenance), tags)


def save_pairs(pd: PairedDataset, path: str, metadata: Optional[dict] = None) -> None:
    """Write a pair corpus; header records version, M, C, H, W, the provenance table and pd.metadata plus metadata."""
    m, c, h, w = pd.adversarial.shape
    header = {"rows": m, "channels": c, "height": h, "width": w, "tags": list(pd.tags),
              "extra": {**pd.metadata, **(metadata or {})}}
    write_container(path, PAIRS_FORMAT, header, {
        "adversarial": pd.adversarial, "clean": pd.clean, "labels": pd.labels, "provenance": pd.provenance,
    })
    logger.info(f"Saved {m} pairs to {path}")


def load_pairs(path: str) -> PairedDataset:
    header, arrays = read_container(path, PAIRS_FORMAT)
    pd = PairedDataset(arrays["adversarial"], arrays["clean"], arrays["labels"], arrays["provenance"],
                       list(header["tags"]), dict(header.get("extra", {})))
    logger.info(f"Loaded {len(pd)} pairs from {path}")
    return pd


def save_dataset(ds: LabeledDataset, path: str) -> None:
    write_container(path, "dataset", {"name": ds.name, "split": ds.split, "num_classes": ds.num_classes},
                    {"images": ds.images, "labels": ds.labels})


def load_dataset(path: str) -> LabeledDataset:
    header, arrays = read_container(path, "dataset")
    return LabeledDataset(arrays["images"], arrays["labels"], header["name"], header["split"], header["num_classes"])
