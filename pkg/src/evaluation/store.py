"""
Artifact locations under the output directory and loaders that name the
command producing a missing artifact.
"""
import logging
import os
from typing import Optional, Tuple

from src.data_io.checkpoints import load_checkpoint, save_checkpoint
from src.data_io.datasets import LabeledDataset, PairedDataset, load_dataset, load_pairs
from src.defense.bundle import MODE_E2E, MODE_REC, MODE_VAE, DefenseBundle, MissingArtifactError, load_bundle
from src.manifest import Manifest
from src.models.classifiers import build_classifier
from src.models.network import Network
from src.models.vae import VAE, VaeSpec, build_vae

logger = logging.getLogger(__name__)

PRODUCERS = {
    "dataset": "prepare-data",
    "classifier": "train-classifier",
    "pairs": "gen-attacks",
    "vae": "train-vae",
    MODE_VAE: "train-vae",
    MODE_REC: "retrain-rec",
    MODE_E2E: "finetune-e2e",
}


class ArtifactStore:
    """
    Paths of every artifact an experiment reads or writes.

    Datasets live in the cache directory; checkpoints, pair corpora, reports
    and grids live under the output directory.
    """

    def __init__(self, output_dir: str, cache_dir: str, manifest: Manifest):
        self.output_dir = output_dir
        self.cache_dir = cache_dir
        self.manifest = manifest

    def _out(self, *parts: str) -> str:
        path = os.path.join(self.output_dir, *parts)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        return path

    def dataset_path(self, dataset: str, split: str) -> str:
        return os.path.join(self.cache_dir, f"{dataset}_{split}.dvae")

    def classifier_path(self, dataset: str, arch: str) -> str:
        return self._out("checkpoints", f"{dataset}_{arch}.ckpt")

    def pairs_path(self, dataset: str, name: str = "all") -> str:
        return self._out("corpus", f"{dataset}_{name}_pairs.dvae")

    def vae_path(self, dataset: str, name: str = "all") -> str:
        return self._out("checkpoints", f"{dataset}_{name}_vae.ckpt")

    def bundle_dir(self) -> str:
        path = os.path.join(self.output_dir, "bundles")
        os.makedirs(path, exist_ok=True)
        return path

    def report_path(self, name: str) -> str:
        return self._out("reports", f"{name}.csv")

    def grid_path(self, name: str) -> str:
        return self._out("grids", f"{name}.pgm")

    @staticmethod
    def bundle_name(dataset: str, arch: str, mode: str) -> str:
        return f"{dataset}_{arch}_{mode.lower()}"

    @staticmethod
    def _require(path: str, artifact: str) -> None:
        if not os.path.exists(path):
            raise MissingArtifactError(f"{path} does not exist; run '{PRODUCERS[artifact]}' first")

    def load_dataset(self, dataset: str, split: str) -> LabeledDataset:
        path = self.dataset_path(dataset, split)
        self._require(path, "dataset")
        return load_dataset(path)

    def load_classifier(self, dataset: str, arch: str, image_shape: Tuple[int, int, int] = (1, 28, 28),
                        num_classes: int = 10) -> Network:
        path = self.classifier_path(dataset, arch)
        self._require(path, "classifier")
        channels, height, width = image_shape
        return load_checkpoint(path, build_classifier(arch, channels, num_classes, image_size=(height, width)))

    def load_pairs(self, dataset: str, name: str = "all") -> PairedDataset:
        path = self.pairs_path(dataset, name)
        self._require(path, "pairs")
        return load_pairs(path)

    def save_vae(self, vae: VAE, dataset: str, name: str = "all") -> str:
        path = self.vae_path(dataset, name)
        save_checkpoint(vae, path)
        self.manifest.update(f"vae:{dataset}:{name}", {"path": path, "likelihood": vae.spec.likelihood,
                                                       "latent_dim": vae.spec.latent_dim})
        return path

    def load_vae(self, dataset: str, spec: VaeSpec, name: str = "all") -> VAE:
        path = self.vae_path(dataset, name)
        self._require(path, "vae")
        return load_checkpoint(path, build_vae(spec))

    def load_bundle(self, dataset: str, arch: str, mode: str, spec: Optional[VaeSpec] = None) -> DefenseBundle:
        """
        VAE bundles pair the dataset's Defense-VAE with the original classifier;
        REC and E2E bundles are read from the manifest records written when they were trained.
        """
        if mode == MODE_VAE:
            spec = spec or VaeSpec()
            classifier = self.load_classifier(dataset, arch, spec.image_shape)
            vae = self.load_vae(dataset, spec)
            return DefenseBundle(vae, classifier, MODE_VAE, {"dataset": dataset})
        return load_bundle(self.bundle_name(dataset, arch, mode), self.manifest, PRODUCERS[mode], spec)

    def save_bundle(self, bundle: DefenseBundle, dataset: str, arch: str) -> None:
        bundle.save(self.bundle_dir(), self.bundle_name(dataset, arch, bundle.mode), self.manifest)
