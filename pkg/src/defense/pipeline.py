"""
Defense-VAE training, purification, classifier retraining on reconstructions
and end-to-end finetuning.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from src.attacks.fgsm import fgsm
from src.autodiff.functional import cross_entropy_logits
from src.autodiff.optim import make_optimizer, optimizer_step, zero_grads
from src.autodiff.random import rng_stream
from src.autodiff.tensor import Tape, Tensor, backward, no_grad
from src.data_io.datasets import LabeledDataset, PairedDataset
from src.defense.bundle import MODE_E2E, DefenseBundle
from src.models.classifiers import build_classifier, predict_labels
from src.models.network import Network
from src.models.training import (TrainConfig, TrainHistory, ensure_finite, progress_bar, shuffled_batches,
                                 train_classifier)
from src.models.vae import VAE, ElboLoss, vae_elbo_loss, vae_forward
from src.utils import batch_slices

logger = logging.getLogger(__name__)


@dataclass
class VaeHistory:
    losses: List[float] = field(default_factory=list)
    reconstruction: List[float] = field(default_factory=list)
    kl: List[float] = field(default_factory=list)

    def as_metadata(self) -> dict:
        return {"loss_history": self.losses, "reconstruction_history": self.reconstruction, "kl_history": self.kl}


def train_defense_vae(pairs: PairedDataset, vae: VAE, cfg: TrainConfig) -> Tuple[VAE, VaeHistory]:
    """
    Fit the VAE to map adversarial rows to their clean counterparts.

    Each step encodes the adversarial batch, samples one z per row and scores
    the decoded image against the clean batch with vae_elbo_loss.

    Raises:
        TrainingDivergedError: when a batch loss is NaN or infinite
    """
    params = vae.parameters()
    optimizer = make_optimizer(cfg.optimizer, cfg.lr)
    history = VaeHistory()
    logger.info(f"Training Defense-VAE on {len(pairs)} pairs {pairs.counts()}, {cfg.epochs} epochs, "
                f"batch {cfg.batch_size}, lr {cfg.lr}, {vae.spec.likelihood} likelihood")
    for epoch in progress_bar(range(cfg.epochs), "vae epochs", cfg.progress):
        sums = np.zeros(3)
        seen = 0
        for index, rows in shuffled_batches(len(pairs), cfg.batch_size, cfg.seed, "vae", epoch):
            with Tape():
                out = vae_forward(vae, Tensor(pairs.adversarial[rows]), rng_stream(cfg.seed, "vae", "z", epoch, index),
                                  training=True)
                loss = vae_elbo_loss(out.mu, out.logvar, out.x_rec, pairs.clean[rows], vae.spec.likelihood)
                value = ensure_finite(loss.total.item(), f"vae epoch {epoch + 1} batch {index}")
                backward(loss.total)
            optimizer_step(params, optimizer)
            zero_grads(params)
            sums += np.array([value, loss.reconstruction.item(), loss.kl.item()]) * len(rows)
            seen += len(rows)
        total, reconstruction, kl = sums / max(seen, 1)
        history.losses.append(total)
        history.reconstruction.append(reconstruction)
        history.kl.append(kl)
        logger.info(f"vae epoch {epoch + 1}/{cfg.epochs}: loss {total:.4f} "
                    f"(reconstruction {reconstruction:.4f}, kl {kl:.4f})")
    if len(history.losses) > 1 and history.losses[-1] >= history.losses[0]:
        logger.warning(f"Defense-VAE loss did not decrease ({history.losses[0]:.4f} -> {history.losses[-1]:.4f})")
    vae.metadata.update({"seed": cfg.seed, "epochs": cfg.epochs, **history.as_metadata()})
    return vae, history


def _purify_batch(vae: VAE, images: np.ndarray, seed: Optional[int], batch_index: int) -> np.ndarray:
    noise = None if seed is None else rng_stream(seed, "purify", batch_index)
    with no_grad():
        return vae_forward(vae, Tensor(images), noise, training=False).x_rec.data


def purify(vae: VAE, x: np.ndarray, seed: Optional[int] = None, batch_size: int = 500, threads: int = 1) -> np.ndarray:
    """
    One encode-decode pass per image.

    Args:
        vae: trained Defense-VAE
        x: images (N, C, H, W) in [0, 1]
        seed: None decodes z = mu; otherwise z is sampled from the (seed, 'purify', batch) streams
        batch_size: rows per forward pass
        threads: worker threads over batches

    Returns:
        reconstructions in (0, 1), same shape as x
    """
    slices = batch_slices(len(x), batch_size)
    if threads <= 1:
        parts = [_purify_batch(vae, x[s], seed, i) for i, s in enumerate(slices)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda item: _purify_batch(vae, x[item[1]], seed, item[0]), enumerate(slices)))
    return np.concatenate(parts).astype(x.dtype) if parts else x.copy()


def retrain_classifier_rec(vae: VAE, ds: LabeledDataset, arch: str, cfg: TrainConfig,
                           batch_size: int = 500) -> Tuple[Network, TrainHistory]:
    """Train a fresh classifier of `arch` on purify(vae, ds.images) with the original labels."""
    logger.info(f"Purifying {len(ds)} training images for the REC classifier {arch}")
    purified = LabeledDataset(purify(vae, ds.images, batch_size=batch_size), ds.labels, ds.name, ds.split,
                              ds.num_classes)
    model = build_classifier(arch, ds.image_shape[0], ds.num_classes, cfg.seed, tuple(ds.image_shape[1:]))
    model, history = train_classifier(model, purified, cfg, name=f"rec_{arch}")
    model.metadata["trained_on"] = "reconstructions"
    return model, history


@dataclass(frozen=True)
class FinetuneConfig:
    """
    Attributes:
        lam: weight of the classification term, >= 0
        epochs, batch_size, lr, seed: joint training schedule
        validation: rows of the validation slice used for the learning curve
        eval_eps: FGSM budget of the validation attack
        progress: show tqdm bars
    """
    lam: float = 1.0
    epochs: int = 2
    batch_size: int = 100
    lr: float = 1e-4
    seed: int = 0
    validation: int = 1000
    eval_eps: float = 0.3
    progress: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


class JointLoss(NamedTuple):
    total: Tensor
    elbo: ElboLoss
    cross_entropy: Tensor


def joint_loss(vae: VAE, classifier: Network, x_adv: np.ndarray, clean: np.ndarray, labels: np.ndarray, lam: float,
               noise=None, training: bool = True, eps: Optional[np.ndarray] = None) -> JointLoss:
    """
    Defense-VAE loss plus lam * cross-entropy of the classifier on the
    reconstruction, backpropagated through the reparameterized z.
    """
    if isinstance(noise, (int, np.integer)):
        noise = rng_stream(noise, "e2e")
    out = vae_forward(vae, Tensor(x_adv), noise, training=training, eps=eps)
    elbo = vae_elbo_loss(out.mu, out.logvar, out.x_rec, clean, vae.spec.likelihood)
    logits = classifier.forward(out.x_rec, training=training, rng=noise)
    ce = cross_entropy_logits(logits, labels)
    return JointLoss(elbo.total + ce * lam, elbo, ce)


def defended_accuracy(bundle: DefenseBundle, images: np.ndarray, labels: np.ndarray, eps: float) -> float:
    """Accuracy of the bundle on FGSM(eps) images crafted against its classifier."""
    attacked = fgsm(bundle.classifier, images, labels, eps).x_adv if eps > 0 else images
    predicted = predict_labels(bundle.classifier, purify(bundle.vae, attacked))
    return float(np.mean(predicted == labels))


@dataclass
class FinetuneCurve:
    """Validation defense accuracy before finetuning (epoch 0) and after every epoch."""
    epochs: List[int] = field(default_factory=list)
    accuracy: List[float] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)


def finetune_e2e(bundle: DefenseBundle, pairs: PairedDataset, cfg: FinetuneConfig,
                 validation: Optional[LabeledDataset] = None) -> Tuple[DefenseBundle, FinetuneCurve]:
    """
    Jointly finetune copies of the bundle's VAE and classifier on the pairs.

    Both parameter sets take one Adam step per batch on the joint loss.
    Validation accuracy (FGSM at cfg.eval_eps against the current classifier,
    purified by the current VAE) is logged before training and after each epoch.

    Returns:
        (E2E bundle, learning curve); the input bundle is left unchanged
    """
    vae, classifier = bundle.vae.clone(), bundle.classifier.clone()
    tuned = DefenseBundle(vae, classifier, MODE_E2E, {**bundle.provenance, "finetuned_from": bundle.mode,
                                                      "lambda": str(cfg.lam)})
    params = {**{f"vae.{k}": v for k, v in vae.parameters().items()},
              **{f"classifier.{k}": v for k, v in classifier.parameters().items()}}
    optimizer = make_optimizer("adam", cfg.lr)
    curve = FinetuneCurve()
    val = validation.head(cfg.validation) if validation is not None else None
    if val is not None:
        curve.epochs.append(0)
        curve.accuracy.append(defended_accuracy(tuned, val.images, val.labels, cfg.eval_eps))
        logger.info(f"e2e before finetuning: validation defense accuracy {100.0 * curve.accuracy[-1]:.2f}%")

    for epoch in progress_bar(range(cfg.epochs), "e2e epochs", cfg.progress):
        epoch_loss, seen = 0.0, 0
        for index, rows in shuffled_batches(len(pairs), cfg.batch_size, cfg.seed, "e2e", epoch):
            with Tape():
                loss = joint_loss(vae, classifier, pairs.adversarial[rows], pairs.clean[rows], pairs.labels[rows],
                                  cfg.lam, rng_stream(cfg.seed, "e2e", epoch, index))
                value = ensure_finite(loss.total.item(), f"e2e epoch {epoch + 1} batch {index}")
                backward(loss.total)
            optimizer_step(params, optimizer)
            zero_grads(params)
            epoch_loss += value * len(rows)
            seen += len(rows)
        curve.losses.append(epoch_loss / max(seen, 1))
        message = f"e2e epoch {epoch + 1}/{cfg.epochs}: joint loss {curve.losses[-1]:.4f}"
        if val is not None:
            curve.epochs.append(epoch + 1)
            curve.accuracy.append(defended_accuracy(tuned, val.images, val.labels, cfg.eval_eps))
            message += f", validation defense accuracy {100.0 * curve.accuracy[-1]:.2f}%"
        logger.info(message)
    vae.metadata.update({"seed": cfg.seed, "epochs": cfg.epochs, "loss_history": curve.losses, "lambda": cfg.lam})
    classifier.metadata.update({"seed": cfg.seed, "epochs": cfg.epochs, "loss_history": curve.losses})
    return tuned, curve

