"""
Attack dispatch and the adversarial training corpus.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence

import numpy as np

from src.attacks.config import CW_L2, DEEPFOOL, FGSM, RAND_FGSM, AttackConfig, AttackResult
from src.attacks.cw import cw_l2
from src.attacks.deepfool import deepfool
from src.attacks.fgsm import fgsm, rand_fgsm
from src.attacks.gradients import Model
from src.autodiff.random import rng_stream
from src.data_io.datasets import IDENTITY_TAG, LabeledDataset, PairedDataset
from src.models.training import progress_bar
from src.utils import batch_slices

logger = logging.getLogger(__name__)


def run_attack(model: Model, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
               batch_index: int = 0) -> AttackResult:
    """Run cfg on one batch; random draws come from the (cfg.seed, cfg.tag, batch_index) stream."""
    if cfg.family == FGSM:
        return fgsm(model, x, labels, cfg.eps)
    if cfg.family == RAND_FGSM:
        return rand_fgsm(model, x, labels, cfg.eps, cfg.alpha, rng_stream(cfg.seed, cfg.tag, batch_index))
    if cfg.family == CW_L2:
        return cw_l2(model, x, labels, cfg)
    if cfg.family == DEEPFOOL:
        return deepfool(model, x, cfg.max_iter, cfg.overshoot, y_true=labels)
    raise ValueError(f"Unknown attack family '{cfg.family}'")


def attack_dataset(model: Model, images: np.ndarray, labels: np.ndarray, cfg: AttackConfig, batch_size: int = 256,
                   threads: int = 1, progress: bool = True) -> AttackResult:
    """
    Attack every row, batch-parallel on a thread pool. Each worker records on
    its own thread-local tape; the model is frozen for the whole run.
    """
    slices = batch_slices(len(images), batch_size)
    with model.frozen():
        if threads <= 1:
            parts = [run_attack(model, images[s], labels[s], cfg, i)
                     for i, s in progress_bar(list(enumerate(slices)), cfg.tag, progress)]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futures = [pool.submit(run_attack, model, images[s], labels[s], cfg, i) for i, s in enumerate(slices)]
                parts = [f.result() for f in progress_bar(futures, cfg.tag, progress)]
    result = AttackResult.concatenate(parts)
    logger.info(f"{cfg.tag} on {len(images)} images: {result.summary()}")
    return result


def generate_attack_corpus(ds: LabeledDataset, model: Model, suite: Sequence[AttackConfig], batch_size: int = 256,
                           threads: int = 1, progress: bool = True) -> PairedDataset:
    """
    Build the (adversarial, clean) training pairs.

    Rows are laid out config by config in suite order, |ds| rows each, followed
    by one identity block where adversarial == clean. Output size is
    |ds| * (|suite| + 1).
    """
    if not suite:
        raise ValueError("attack suite is empty")
    adversarial: List[np.ndarray] = []
    tags = [cfg.tag for cfg in suite] + [IDENTITY_TAG]
    if len(set(tags)) != len(tags):
        raise ValueError(f"attack suite has duplicate configurations: {tags}")
    for cfg in suite:
        adversarial.append(attack_dataset(model, ds.images, ds.labels, cfg, batch_size, threads, progress).x_adv)
    adversarial.append(ds.images.copy())
    count = len(ds)
    pairs = PairedDataset(np.concatenate(adversarial), np.tile(ds.images, (len(tags), 1, 1, 1)),
                          np.tile(ds.labels, len(tags)), np.repeat(np.arange(len(tags)), count), tags)
    logger.info(f"Attack corpus: {len(pairs)} pairs from {count} images and {len(suite)} configurations")
    return pairs
