"""
DefenseBundle: a Defense-VAE paired with the classifier it protects.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Optional

from src.autodiff.tensor import DimensionError
from src.data_io.checkpoints import load_checkpoint, save_checkpoint
from src.manifest import Manifest
from src.models.classifiers import build_classifier
from src.models.network import Network
from src.models.vae import VAE, VaeSpec, build_vae

logger = logging.getLogger(__name__)

MODE_VAE = "VAE"
MODE_REC = "REC"
MODE_E2E = "E2E"
MODES = (MODE_VAE, MODE_REC, MODE_E2E)
REPORT_COLUMNS = {MODE_VAE: "vae", MODE_REC: "vae_rec", MODE_E2E: "vae_e2e"}


class MissingArtifactError(FileNotFoundError):
    """An artifact needed by a command does not exist; names the command producing it."""


@dataclass
class DefenseBundle:
    """
    Attributes:
        vae: purifier
        classifier: classifier fed with purified images
        mode: VAE (original classifier), REC (retrained on reconstructions) or E2E (jointly finetuned)
        provenance: dataset, arch, seeds and checkpoint paths
    """
    vae: VAE
    classifier: Network
    mode: str = MODE_VAE
    provenance: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"Unknown defense mode '{self.mode}', expected one of {MODES}")
        if tuple(self.vae.input_shape) != tuple(self.classifier.input_shape):
            raise DimensionError(f"VAE works on {self.vae.input_shape} but the classifier expects "
                                 f"{self.classifier.input_shape}")

    @property
    def report_column(self) -> str:
        return REPORT_COLUMNS[self.mode]

    def save(self, directory: str, name: str, manifest: Manifest) -> None:
        """Write the VAE and classifier checkpoints and record the bundle in the manifest."""
        vae_path = os.path.join(directory, f"{name}_vae.ckpt")
        classifier_path = os.path.join(directory, f"{name}_classifier.ckpt")
        save_checkpoint(self.vae, vae_path)
        save_checkpoint(self.classifier, classifier_path)
        manifest.update(f"bundle:{name}", {
            "mode": self.mode, "vae": vae_path, "classifier": classifier_path,
            "arch": self.classifier.metadata.get("arch", ""),
            "image_shape": ",".join(map(str, self.classifier.input_shape)),
            "num_classes": self.classifier.output_shape[0], "latent_dim": self.vae.spec.latent_dim,
            "likelihood": self.vae.spec.likelihood, **self.provenance,
        })
        logger.info(f"Saved {self.mode} bundle '{name}' to {directory}")


def load_bundle(name: str, manifest: Manifest, producer: str = "train-vae",
                spec: Optional[VaeSpec] = None) -> DefenseBundle:
    """
    Rebuild the bundle recorded under 'bundle:<name>' in manifest. spec gives the
    VAE layout; the default layout with the recorded latent size is used without it.

    Raises:
        MissingArtifactError: the bundle or one of its checkpoints is missing
    """
    record = manifest.section(f"bundle:{name}")
    if not record:
        raise MissingArtifactError(f"No bundle '{name}' in {manifest.config_file}; run '{producer}' first")
    for key in ("vae", "classifier"):
        if not os.path.exists(record[key]):
            raise MissingArtifactError(f"Checkpoint {record[key]} of bundle '{name}' is missing; "
                                       f"run '{producer}' first")
    channels, height, width = (int(v) for v in record.get("image_shape", "1,28,28").split(","))
    classifier = load_checkpoint(record["classifier"], build_classifier(record["arch"], channels,
                                                                        int(record.get("num_classes", 10)),
                                                                        image_size=(height, width)))
    if spec is None:
        spec = VaeSpec(latent_dim=int(record["latent_dim"]), image_shape=(channels, height, width),
                       likelihood=record["likelihood"])
    vae = load_checkpoint(record["vae"], build_vae(spec))
    provenance = {k: v for k, v in record.items()
                  if k not in ("mode", "vae", "classifier", "arch", "image_shape", "num_classes", "latent_dim",
                               "likelihood")}
    return DefenseBundle(vae, classifier, record["mode"], provenance)
