"""
Black-box transfer attacks: a substitute classifier trained from label queries
to the target, FGSM crafted on the substitute, defenses applied on the target side.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Sequence

import numpy as np

from src.attacks.config import FGSM, AttackConfig
from src.attacks.corpus import attack_dataset
from src.attacks.gradients import class_gradients
from src.autodiff.random import rng_stream
from src.data_io.datasets import LabeledDataset
from src.defense.bundle import DefenseBundle
from src.evaluation.harness import SuiteOptions, purifier, score_images
from src.evaluation.report import EvalReport
from src.models.classifiers import build_classifier, predict_labels
from src.models.network import Network
from src.models.training import TrainConfig, train_classifier
from src.utils import Stopwatch, batch_slices

logger = logging.getLogger(__name__)

SUBSTITUTE_ARCHITECTURES = ("B", "E")

LabelOracle = Callable[[np.ndarray], np.ndarray]


class BlackboxSetupError(ValueError):
    """A black-box setup names an unknown substitute or a non-positive schedule."""


@dataclass(frozen=True)
class BlackboxSetup:
    """
    Attributes:
        target: architecture id of the attacked classifier
        substitute: substitute architecture, B or E
        queries: test images labeled by the target to seed the substitute
        rounds: substitute training rounds; each but the last doubles the query set
        step: Jacobian augmentation step
        epochs: substitute training epochs per round
        eps: FGSM budget against the substitute
        seed: seed of the query draw and the substitute streams
    """
    target: str = "A"
    substitute: str = "B"
    queries: int = 150
    rounds: int = 6
    step: float = 0.1
    epochs: int = 10
    eps: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.substitute not in SUBSTITUTE_ARCHITECTURES:
            raise BlackboxSetupError(f"blackbox.substitute must be one of {SUBSTITUTE_ARCHITECTURES}, "
                                     f"got '{self.substitute}'")
        if self.queries < 1 or self.rounds < 1 or self.epochs < 1:
            raise BlackboxSetupError("blackbox.queries, blackbox.rounds and blackbox.epochs must be >= 1")

    @property
    def label(self) -> str:
        return f"{self.target}/{self.substitute}"


def jacobian_augment(substitute: Network, images: np.ndarray, labels: np.ndarray, step: float) -> np.ndarray:
    """x + step * sign(d logit_label / dx) for every x, clipped to [0, 1]."""
    out = []
    for part in batch_slices(len(images), 100):
        _, grads = class_gradients(substitute, images[part])
        picked = grads[labels[part], np.arange(part.stop - part.start)]
        out.append(np.clip(images[part] + step * np.sign(picked), 0.0, 1.0))
    return np.concatenate(out).astype(images.dtype)


def train_substitute(label_oracle: LabelOracle, seed_images: np.ndarray, setup: BlackboxSetup,
                     num_classes: int = 10, batch_size: int = 100, progress: bool = True) -> Network:
    """
    Train a substitute with Jacobian-based dataset augmentation.

    The only access to the target is label_oracle, which returns predicted
    labels for a batch of images. Each round labels the current set, trains
    the substitute on it and, except in the last round, appends one
    augmented copy of every image.
    """
    substitute = build_classifier(setup.substitute, seed_images.shape[1], num_classes, setup.seed,
                                  tuple(seed_images.shape[2:]))
    images = seed_images.copy()
    queried = 0
    for round_index in range(setup.rounds):
        labels = np.asarray(label_oracle(images), dtype=np.int64)
        queried += len(images)
        ds = LabeledDataset(images, labels, "substitute", "train", num_classes)
        cfg = TrainConfig(epochs=setup.epochs, batch_size=batch_size, seed=setup.seed + round_index,
                          holdout=0, progress=progress)
        train_classifier(substitute, ds, cfg, name=f"substitute_{setup.substitute}")
        logger.info(f"substitute round {round_index + 1}/{setup.rounds}: {len(images)} images, "
                    f"{queried} label queries so far")
        if round_index + 1 < setup.rounds:
            images = np.concatenate([images, jacobian_augment(substitute, images, labels, setup.step)])
    substitute.metadata.update({"queries": queried, "rounds": setup.rounds, "arch": setup.substitute})
    return substitute


def split_queries(test: LabeledDataset, setup: BlackboxSetup):
    """(query rows, evaluation rows); query images never count toward accuracy."""
    order = rng_stream(setup.seed, "blackbox", "queries").permutation(len(test))
    return np.sort(order[:setup.queries]), np.sort(order[setup.queries:])


def run_blackbox_suite(setups: Sequence[BlackboxSetup], dataset: str, test: LabeledDataset,
                       targets: Mapping[str, Network], bundles: Mapping[str, Dict[str, DefenseBundle]],
                       options: SuiteOptions = SuiteOptions()) -> EvalReport:
    """
    Transfer FGSM from a substitute to each target and score the no-attack,
    undefended and per-mode defended accuracies on the non-query test images.
    The substitute's agreement with the target labels is recorded in the
    report metadata.
    """
    report = EvalReport("blackbox", with_average=True)
    for setup in setups:
        if setup.target not in targets:
            raise ValueError(f"no target classifier '{setup.target}' for black-box setup {setup.label}")
        target = targets[setup.target]
        query_rows, eval_rows = split_queries(test, setup)
        evaluation = test.subset(eval_rows)

        def oracle(images: np.ndarray, target=target) -> np.ndarray:
            return predict_labels(target, images)

        with Stopwatch() as timer:
            substitute = train_substitute(oracle, test.images[query_rows], setup, test.num_classes,
                                          progress=options.progress)
        agreement = float(np.mean(predict_labels(substitute, evaluation.images) == oracle(evaluation.images)))
        report.metadata[f"substitute_agreement:{dataset}/{setup.label}"] = f"{agreement:.4f}"
        logger.info(f"substitute {setup.substitute} agrees with target {setup.target} on "
                    f"{100.0 * agreement:.2f}% of {len(evaluation)} images ({timer.elapsed:.1f}s)")

        cid = f"{dataset}/{setup.label}"
        cfg = AttackConfig(FGSM, eps=setup.eps, seed=setup.seed)
        attacked = attack_dataset(substitute, evaluation.images, evaluation.labels, cfg, options.batch_size,
                                  options.threads, options.progress).x_adv
        report.add(cfg.report_id, cid, "no_attack", *score_images(target, evaluation.images, evaluation.labels))
        report.add(cfg.report_id, cid, "no_defense", *score_images(target, attacked, evaluation.labels))
        for mode, bundle in sorted(bundles.get(setup.target, {}).items()):
            with Stopwatch() as timer:
                scored = score_images(bundle.classifier, attacked, evaluation.labels, purifier(bundle.vae, options))
            report.add(cfg.report_id, cid, bundle.report_column, *scored, timer.elapsed)
    return report
