"""
Supervised training loops and the helpers shared with the defense trainers.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from src.autodiff.functional import cross_entropy_logits
from src.autodiff.optim import make_optimizer, optimizer_step, zero_grads
from src.autodiff.random import rng_stream
from src.autodiff.tensor import Tape, Tensor, backward, no_grad
from src.data_io.datasets import LabeledDataset
from src.models.classifiers import accuracy
from src.models.network import Network

logger = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    """A training loss became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    """
    Attributes:
        epochs: passes over the training rows, >= 1
        batch_size: rows per optimizer step, >= 1
        lr: learning rate
        seed: seed of the shuffle, dropout and reparameterization streams
        optimizer: 'adam' or 'sgd'
        holdout: rows kept out of training to track held-out loss (skipped on small sets)
        progress: show tqdm bars
    """
    epochs: int = 10
    batch_size: int = 100
    lr: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    holdout: int = 1000
    progress: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


@dataclass
class TrainHistory:
    losses: List[float] = field(default_factory=list)
    holdout_losses: List[float] = field(default_factory=list)
    train_accuracy: Optional[float] = None

    def as_metadata(self) -> dict:
        return {"losses": self.losses, "holdout_losses": self.holdout_losses, "train_accuracy": self.train_accuracy}


def progress_bar(iterable: Iterable, desc: str, enabled: bool = True, total: Optional[int] = None) -> Iterable:
    return tqdm(iterable, desc=desc, total=total, leave=False, disable=not enabled)


def shuffled_batches(count: int, batch_size: int, seed: int, stream: str,
                     epoch: int) -> Iterator[Tuple[int, np.ndarray]]:
    """(batch index, row indices) of one epoch, order drawn from the (seed, stream, epoch) stream."""
    order = rng_stream(seed, stream, "shuffle", epoch).permutation(count)
    for index, start in enumerate(range(0, count, batch_size)):
        yield index, order[start:start + batch_size]


def ensure_finite(value: float, context: str) -> float:
    if not np.isfinite(value):
        raise TrainingDivergedError(f"Loss became {value} during {context}")
    return value


def split_holdout(count: int, holdout: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded (train rows, held-out rows); no held-out rows unless holdout < count / 2."""
    order = rng_stream(seed, "holdout").permutation(count)
    if holdout <= 0 or holdout * 2 > count:
        return np.sort(order), np.zeros(0, dtype=np.int64)
    return np.sort(order[holdout:]), np.sort(order[:holdout])


def classification_loss(model: Network, images: np.ndarray, labels: np.ndarray, batch_size: int = 500) -> float:
    """Eval-mode mean cross-entropy."""
    total = 0.0
    with no_grad():
        for start in range(0, len(labels), batch_size):
            logits = model.forward(Tensor(images[start:start + batch_size]), training=False)
            total += cross_entropy_logits(logits, labels[start:start + batch_size]).item() * len(logits.data)
    return total / max(len(labels), 1)


def train_classifier(model: Network, ds: LabeledDataset, cfg: TrainConfig,
                     name: str = "classifier") -> Tuple[Network, TrainHistory]:
    """
    Train model on ds with minibatch cross-entropy.

    Args:
        model: freshly built or pretrained classifier, updated in place
        ds: training split
        cfg: training hyperparameters
        name: label used in logs and progress bars

    Returns:
        (model, history); history holds per-epoch train and held-out losses

    Raises:
        TrainingDivergedError: when a batch loss is NaN or infinite
    """
    if ds.split != "train":
        raise ValueError(f"train_classifier needs the train split, got '{ds.split}'")
    train_rows, held_rows = split_holdout(len(ds), cfg.holdout, cfg.seed)
    images, labels = ds.images, ds.labels
    params = model.parameters()
    optimizer = make_optimizer(cfg.optimizer, cfg.lr)
    history = TrainHistory()
    logger.info(f"Training {name} on {len(train_rows)} images ({len(held_rows)} held out), "
                f"{cfg.epochs} epochs, batch {cfg.batch_size}, lr {cfg.lr}")

    for epoch in progress_bar(range(cfg.epochs), f"{name} epochs", cfg.progress):
        epoch_loss, seen = 0.0, 0
        batches = shuffled_batches(len(train_rows), cfg.batch_size, cfg.seed, name, epoch)
        for index, rows in batches:
            rows = train_rows[rows]
            with Tape():
                logits = model.forward(Tensor(images[rows]), training=True,
                                       rng=rng_stream(cfg.seed, name, "dropout", epoch, index))
                loss = cross_entropy_logits(logits, labels[rows])
                value = ensure_finite(loss.item(), f"{name} epoch {epoch + 1} batch {index}")
                backward(loss)
            optimizer_step(params, optimizer)
            zero_grads(params)
            epoch_loss += value * len(rows)
            seen += len(rows)
        history.losses.append(epoch_loss / max(seen, 1))
        message = f"{name} epoch {epoch + 1}/{cfg.epochs}: loss {history.losses[-1]:.4f}"
        if len(held_rows):
            history.holdout_losses.append(classification_loss(model, images[held_rows], labels[held_rows]))
            message += f", held-out loss {history.holdout_losses[-1]:.4f}"
        logger.info(message)

    if len(history.holdout_losses) > 1 and history.holdout_losses[-1] >= history.holdout_losses[0]:
        logger.warning(f"{name}: held-out loss did not decrease ({history.holdout_losses[0]:.4f} -> "
                       f"{history.holdout_losses[-1]:.4f})")
    correct, total = accuracy(model, images[train_rows], labels[train_rows])
    history.train_accuracy = correct / total
    logger.info(f"{name}: final train accuracy {100.0 * history.train_accuracy:.2f}%")
    model.metadata.update({"seed": cfg.seed, "epochs": cfg.epochs, "loss_history": history.losses})
    return model, history
