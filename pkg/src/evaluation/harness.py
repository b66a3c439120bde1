"""
White-box and leave-one-attack-out experiment grids.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.attacks.config import CW_L2, DEEPFOOL, FGSM, RAND_FGSM, AttackConfig
from src.attacks.corpus import attack_dataset, generate_attack_corpus
from src.autodiff.random import rng_stream
from src.data_io.datasets import LabeledDataset, PairedDataset
from src.defense.bundle import MODE_REC, MODE_VAE, DefenseBundle
from src.defense.pipeline import purify, retrain_classifier_rec, train_defense_vae
from src.evaluation.report import CLEAN_ATTACK, EvalReport
from src.models.classifiers import predict_labels
from src.models.network import Network
from src.models.training import TrainConfig
from src.models.vae import VaeSpec, build_vae
from src.utils import Stopwatch

logger = logging.getLogger(__name__)

HELD_OUT_FAMILIES = (FGSM, RAND_FGSM, CW_L2)


@dataclass(frozen=True)
class SuiteOptions:
    """
    Attributes:
        batch_size: attack and purification batch
        threads: worker threads for attacks and purification
        cw_subset: test images the CW rows run on, drawn with seed
        seed: seed of the CW slice
        progress: show tqdm bars
    """
    batch_size: int = 256
    threads: int = 1
    cw_subset: int = 2000
    seed: int = 0
    progress: bool = True


@dataclass
class WhiteboxCell:
    """
    One (dataset, arch) row group of the white-box table.

    Attributes:
        dataset: dataset name
        arch: classifier architecture id
        test: evaluation split
        classifier: undefended target
        bundles: defended pipelines by mode (VAE, REC, E2E); missing modes leave empty cells
    """
    dataset: str
    arch: str
    test: LabeledDataset
    classifier: Network
    bundles: Dict[str, DefenseBundle] = field(default_factory=dict)

    @property
    def classifier_id(self) -> str:
        return f"{self.dataset}/{self.arch}"


def eval_accuracy(classifier: Network, images: np.ndarray, labels: np.ndarray,
                  preprocess: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> float:
    """Fraction of argmax(logits) == label, optionally after preprocess (e.g. purification)."""
    correct, total = score_images(classifier, images, labels, preprocess)
    return correct / total


def score_images(classifier: Network, images: np.ndarray, labels: np.ndarray,
                 preprocess: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> Tuple[int, int]:
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    if preprocess is not None:
        images = preprocess(images)
    predicted = predict_labels(classifier, images)
    return int(np.sum(predicted == labels)), len(labels)


def attack_slice(test: LabeledDataset, cfg: AttackConfig, options: SuiteOptions) -> LabeledDataset:
    """CW rows run on a seeded slice of cw_subset images; other attacks use the whole split."""
    if cfg.family != CW_L2 or options.cw_subset <= 0 or options.cw_subset >= len(test):
        return test
    order = rng_stream(options.seed, "cw_slice", test.name).permutation(len(test))
    return test.subset(np.sort(order[:options.cw_subset]))


def purifier(vae, options: SuiteOptions):
    return lambda images: purify(vae, images, batch_size=options.batch_size, threads=options.threads)


def defended_cell(bundle: DefenseBundle, data: LabeledDataset, cfg: AttackConfig,
                  options: SuiteOptions) -> Tuple[int, int, float]:
    """
    Attack the bundle's classifier with full gradient access, purify, classify.

    Returns:
        (correct, n_examples, wall time)
    """
    with Stopwatch() as timer:
        attacked = attack_dataset(bundle.classifier, data.images, data.labels, cfg, options.batch_size,
                                  options.threads, options.progress)
        correct, total = score_images(bundle.classifier, attacked.x_adv, data.labels, purifier(bundle.vae, options))
    return correct, total, timer.elapsed


def run_whitebox_suite(cells: Sequence[WhiteboxCell], attacks: Sequence[AttackConfig],
                       options: SuiteOptions = SuiteOptions()) -> EvalReport:
    """
    White-box accuracy table: one row per (attack, classifier) with the
    no-attack, undefended and per-mode defended accuracies, plus a 'clean' row
    per classifier holding each mode's accuracy on purified clean images.
    """
    report = EvalReport("whitebox", with_average=True)
    report.metadata["cw_subset"] = str(options.cw_subset)
    report.metadata["seed"] = str(options.seed)
    for cell in cells:
        cid = cell.classifier_id
        with Stopwatch() as timer:
            clean = score_images(cell.classifier, cell.test.images, cell.test.labels)
        report.add(CLEAN_ATTACK, cid, "no_attack", *clean, timer.elapsed)
        for mode, bundle in sorted(cell.bundles.items()):
            with Stopwatch() as timer:
                scored = score_images(bundle.classifier, cell.test.images, cell.test.labels,
                                      purifier(bundle.vae, options))
            report.add(CLEAN_ATTACK, cid, bundle.report_column, *scored, timer.elapsed)

        for cfg in attacks:
            data = attack_slice(cell.test, cfg, options)
            report.metadata[f"attack:{cfg.report_id}"] = cfg.tag
            report.add(cfg.report_id, cid, "no_attack", *score_images(cell.classifier, data.images, data.labels))
            with Stopwatch() as timer:
                attacked = attack_dataset(cell.classifier, data.images, data.labels, cfg, options.batch_size,
                                          options.threads, options.progress)
                undefended = score_images(cell.classifier, attacked.x_adv, data.labels)
            report.add(cfg.report_id, cid, "no_defense", *undefended, timer.elapsed)
            for mode, bundle in sorted(cell.bundles.items()):
                report.add(cfg.report_id, cid, bundle.report_column, *defended_cell(bundle, data, cfg, options))
    return report


@dataclass
class LeaveOneOutSetup:
    """
    Attributes:
        dataset, arch: the classifier under test
        train: training split, source of DeepFool pairs and REC retraining
        test: evaluation split
        classifier: original classifier; attacks in VAE mode target it
        corpus: full 12-configuration pair corpus with its identity block
        vae_spec: architecture of the held-out Defense-VAEs
        vae_train: Defense-VAE schedule
        rec_train: REC classifier schedule
        reference: bundles trained on all three attack families, by mode
    """
    dataset: str
    arch: str
    train: LabeledDataset
    test: LabeledDataset
    classifier: Network
    corpus: PairedDataset
    vae_spec: VaeSpec = field(default_factory=VaeSpec)
    vae_train: TrainConfig = field(default_factory=TrainConfig)
    rec_train: TrainConfig = field(default_factory=TrainConfig)
    reference: Dict[str, DefenseBundle] = field(default_factory=dict)

    @property
    def classifier_id(self) -> str:
        return f"{self.dataset}/{self.arch}"


def _heldout_bundles(setup: LeaveOneOutSetup, pairs: PairedDataset, modes: Sequence[str],
                     label: str) -> Dict[str, DefenseBundle]:
    logger.info(f"Leave-one-out: training Defense-VAE '{label}' on {len(pairs)} pairs {pairs.counts()}")
    vae, _ = train_defense_vae(pairs, build_vae(setup.vae_spec, setup.vae_train.seed), setup.vae_train)
    bundles = {MODE_VAE: DefenseBundle(vae, setup.classifier, MODE_VAE, {"trained_on": label})}
    if MODE_REC in modes:
        rec, _ = retrain_classifier_rec(vae, setup.train, setup.arch, setup.rec_train)
        bundles[MODE_REC] = DefenseBundle(vae, rec, MODE_REC, {"trained_on": label})
    return bundles


def deepfool_pairs(setup: LeaveOneOutSetup, options: SuiteOptions, cfg: Optional[AttackConfig] = None) -> PairedDataset:
    """DeepFool pairs against the original classifier, without an identity block."""
    cfg = cfg or AttackConfig(DEEPFOOL, seed=options.seed)
    if cfg.family != DEEPFOOL:
        raise ValueError(f"DeepFool augmentation needs a DEEPFOOL config, got {cfg.family}")
    pairs = generate_attack_corpus(setup.train, setup.classifier, [cfg], options.batch_size, options.threads,
                                   options.progress)
    return pairs.select_families([DEEPFOOL], keep_identity=False)


def run_leaveoneout_suite(setup: LeaveOneOutSetup, test_attacks: Mapping[str, AttackConfig],
                          held_out: Sequence[str] = HELD_OUT_FAMILIES, deepfool_augment: bool = True,
                          modes: Sequence[str] = (MODE_VAE, MODE_REC),
                          options: SuiteOptions = SuiteOptions(),
                          deepfool: Optional[AttackConfig] = None) -> EvalReport:
    """
    Defend each held-out attack family with a Defense-VAE trained only on the
    other two families' corpora (plus the identity block).

    Rows per held-out family f:
        '<f>'                  the reference bundles trained on all three families
        '<f>_heldout'          VAE trained without f
        '<f>_heldout+deepfool' same, with DeepFool pairs added to training

    Args:
        setup: classifier, corpora and training schedules
        test_attacks: evaluation config per family
        held_out: families to hold out, each one in turn
        deepfool_augment: also train and score the DeepFool-augmented variant
        modes: VAE (original classifier) and/or REC (retrained classifier)
        options: batching, threading and CW slice
        deepfool: DeepFool config of the augmentation pairs; defaults to AttackConfig(DEEPFOOL)
    """
    for family in held_out:
        if family not in HELD_OUT_FAMILIES or family not in test_attacks:
            raise ValueError(f"cannot hold out '{family}': needs one of {HELD_OUT_FAMILIES} with a test config")
    report = EvalReport("leaveoneout")
    cid = setup.classifier_id
    extra = deepfool_pairs(setup, options, deepfool) if deepfool_augment else None

    for family in held_out:
        cfg = test_attacks[family]
        data = attack_slice(setup.test, cfg, options)
        rid = cfg.report_id
        variants = [(f"{rid}_heldout", setup.corpus.select_families([f for f in HELD_OUT_FAMILIES if f != family]))]
        if extra is not None:
            variants.append((f"{rid}_heldout+deepfool", PairedDataset.concatenate([variants[0][1], extra])))

        attacked = attack_dataset(setup.classifier, data.images, data.labels, cfg, options.batch_size,
                                  options.threads, options.progress)
        undefended = score_images(setup.classifier, attacked.x_adv, data.labels)
        for row, _ in variants + ([(rid, None)] if setup.reference else []):
            report.add(row, cid, "no_defense", *undefended)
        for mode in modes:
            if mode in setup.reference:
                bundle = setup.reference[mode]
                report.add(rid, cid, bundle.report_column, *defended_cell(bundle, data, cfg, options))
        for row, pairs in variants:
            for mode, bundle in _heldout_bundles(setup, pairs, modes, row).items():
                report.add(row, cid, bundle.report_column, *defended_cell(bundle, data, cfg, options))
    return report
