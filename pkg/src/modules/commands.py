"""
This module maps every command of the command line to the pipeline
operations, skipping work whose outputs already exist unless forced.
"""
import logging
import os
from typing import Callable, Dict, List, Optional

import numpy as np

from src.attacks.config import CW_L2, DEEPFOOL, FGSM, RAND_FGSM, AttackConfig, evaluation_attacks, training_suite
from src.attacks.corpus import attack_dataset, generate_attack_corpus
from src.autodiff.random import rng_stream
from src.autodiff.tensor import set_precision
from src.data_io.checkpoints import save_checkpoint
from src.data_io.datasets import LabeledDataset, save_dataset, save_pairs
from src.data_io.idx import load_idx_dataset
from src.data_io.images import read_pgm, write_pgm
from src.defense.bundle import MODE_E2E, MODE_REC, MODE_VAE, DefenseBundle, MissingArtifactError
from src.defense.pipeline import FinetuneConfig, finetune_e2e, purify, retrain_classifier_rec, train_defense_vae
from src.defense.zsearch import ZSearchConfig
from src.evaluation.acceptance import AcceptanceError, enforce_acceptance
from src.evaluation.artifacts import collect_grid_samples, emit_artifacts, write_finetune_curve
from src.evaluation.blackbox import BlackboxSetup, BlackboxSetupError, run_blackbox_suite
from src.evaluation.harness import (LeaveOneOutSetup, SuiteOptions, WhiteboxCell, run_leaveoneout_suite,
                                    run_whitebox_suite)
from src.evaluation.report import EvalReport
from src.evaluation.speed import run_speed_bench
from src.evaluation.store import ArtifactStore
from src.manifest import Manifest
from src.models.classifiers import build_classifier
from src.models.training import TrainConfig, train_classifier
from src.models.vae import VaeSpec, build_vae
from src.modules.config_parse import ConfigError, RunConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_ACCEPTANCE = 3

COMMANDS = (
    "prepare-data", "train-classifier", "gen-attacks", "train-vae", "retrain-rec", "finetune-e2e",
    "eval-whitebox", "eval-leaveoneout", "eval-blackbox", "bench-speed", "purify-image", "reproduce-all",
)
REPRODUCE_STEPS = (
    "prepare-data", "train-classifier", "gen-attacks", "train-vae", "retrain-rec", "finetune-e2e",
    "eval-whitebox", "eval-blackbox", "bench-speed",
)


class ExperimentRunner:
    """
    Runs pipeline commands against one resolved configuration.

    Reports produced during the run are kept in self.reports so that
    reproduce-all can check the acceptance thresholds at the end.
    """

    def __init__(self, config: RunConfig, force: bool = False):
        self.config = config
        self.force = force
        admin = config.admin
        self.manifest = Manifest(os.path.join(admin.output_dir, "manifests"), name="run")
        self.store = ArtifactStore(admin.output_dir, admin.cache_dir, self.manifest)
        self.reports: Dict[str, EvalReport] = {}
        self.options = SuiteOptions(config.evaluation.batch_size, admin.threads, config.evaluation.cw_subset,
                                    admin.seed, admin.progress)
        self.handlers: Dict[str, Callable[[], None]] = {
            "prepare-data": self.prepare_data,
            "train-classifier": self.train_classifiers,
            "gen-attacks": self.generate_attacks,
            "train-vae": self.train_vae,
            "retrain-rec": self.retrain_rec,
            "finetune-e2e": self.finetune,
            "eval-whitebox": self.eval_whitebox,
            "eval-leaveoneout": self.eval_leaveoneout,
            "eval-blackbox": self.eval_blackbox,
            "bench-speed": self.bench_speed,
            "reproduce-all": self.reproduce_all,
        }

    def _skip(self, path: str, what: str) -> bool:
        if os.path.exists(path) and not self.force:
            logger.info(f"Skipping {what}: {path} exists (use --force to redo)")
            return True
        return False

    def _train_config(self, epochs: int, batch_size: int, lr: float) -> TrainConfig:
        c = self.config
        return TrainConfig(epochs=epochs, batch_size=batch_size, lr=lr, seed=c.admin.seed,
                           optimizer=c.classifier.optimizer, holdout=c.classifier.holdout, progress=c.admin.progress)

    def _vae_spec(self, image_shape=(1, 28, 28)) -> VaeSpec:
        return VaeSpec(latent_dim=self.config.vae.latent_dim, image_shape=tuple(image_shape),
                       likelihood=self.config.vae.likelihood)

    def _archs(self) -> List[str]:
        c = self.config
        wanted = list(c.classifier.archs) + [c.vae.corpus_arch, c.evaluation.leaveoneout_arch, *c.blackbox.targets]
        return sorted(set(wanted))

    def _attack_options(self) -> dict:
        cw = self.config.cw
        return {"lr_scale": cw.lr_scale, "steps": cw.steps, "const_c": cw.const_c, "kappa": cw.kappa,
                "binary_search_steps": cw.binary_search_steps}

    def _test_attacks(self) -> Dict[str, AttackConfig]:
        c = self.config
        attacks = evaluation_attacks(c.admin.seed, c.fgsm.eps, c.rand_fgsm.alpha, c.cw.lr, rand_eps=c.rand_fgsm.eps,
                                     **self._attack_options())
        return {cfg.family: cfg for cfg in attacks}

    def _deepfool_attack(self) -> AttackConfig:
        d = self.config.deepfool
        return AttackConfig(DEEPFOOL, max_iter=d.max_iter, overshoot=d.overshoot, seed=self.config.admin.seed)

    def _bundles(self, dataset: str, arch: str, required: bool = True) -> Dict[str, DefenseBundle]:
        bundles = {}
        for mode in self.config.evaluation.modes:
            try:
                bundles[mode] = self.store.load_bundle(dataset, arch, mode, self._vae_spec())
            except MissingArtifactError:
                if required:
                    raise
                logger.warning(f"No {mode} bundle for {dataset}/{arch}, its cells stay empty")
        return bundles

    def prepare_data(self) -> None:
        self.config.validate_paths()
        for dataset in self.config.data.datasets:
            for split in ("train", "test"):
                target = self.store.dataset_path(dataset, split)
                if self._skip(target, f"{dataset}/{split}"):
                    continue
                os.makedirs(os.path.dirname(os.path.abspath(target)), exist_ok=True)
                ds = load_idx_dataset(self.config.data.idx_path(dataset, split, "images"),
                                      self.config.data.idx_path(dataset, split, "labels"), name=dataset, split=split)
                save_dataset(ds, target)
                self.manifest.set(f"data:{dataset}", split, target)

    def train_classifiers(self) -> None:
        c = self.config.classifier
        for dataset in self.config.data.datasets:
            for arch in self._archs():
                path = self.store.classifier_path(dataset, arch)
                if self._skip(path, f"classifier {dataset}/{arch}"):
                    continue
                train = self.store.load_dataset(dataset, "train")
                model = build_classifier(arch, train.image_shape[0], train.num_classes, self.config.admin.seed,
                                         tuple(train.image_shape[1:]))
                model, history = train_classifier(model, train, self._train_config(c.epochs, c.batch_size, c.lr),
                                                  name=f"{dataset}_{arch}")
                save_checkpoint(model, path, {"dataset": dataset, **history.as_metadata()})
                self.manifest.update(f"classifier:{dataset}:{arch}", {"path": path, "seed": self.config.admin.seed})

    def _corpus_source(self, dataset: str) -> LabeledDataset:
        train = self.store.load_dataset(dataset, "train")
        subsample = self.config.vae.corpus_subsample
        if 0 < subsample < len(train):
            rows = rng_stream(self.config.admin.seed, "corpus_subsample", dataset).permutation(len(train))
            train = train.subset(np.sort(rows[:subsample]))
            self.manifest.set(f"corpus:{dataset}", "subsample", subsample)
        return train

    def generate_attacks(self) -> None:
        c = self.config
        for dataset in c.data.datasets:
            path = self.store.pairs_path(dataset)
            if self._skip(path, f"attack corpus for {dataset}"):
                continue
            model = self.store.load_classifier(dataset, c.vae.corpus_arch)
            suite = training_suite(c.fgsm.corpus_eps, c.rand_fgsm.alpha, c.cw.corpus_lr, c.admin.seed,
                                   **self._attack_options())
            pairs = generate_attack_corpus(self._corpus_source(dataset), model, suite, c.evaluation.batch_size,
                                           c.admin.threads, c.admin.progress)
            save_pairs(pairs, path, {"dataset": dataset, "arch": c.vae.corpus_arch, "seed": c.admin.seed})
            self.manifest.update(f"corpus:{dataset}", {"path": path, "rows": len(pairs),
                                                       "arch": c.vae.corpus_arch, "tags": ", ".join(pairs.tags)})

    def train_vae(self) -> None:
        c = self.config
        for dataset in c.data.datasets:
            if self._skip(self.store.vae_path(dataset), f"Defense-VAE for {dataset}"):
                continue
            pairs = self.store.load_pairs(dataset)
            vae = build_vae(self._vae_spec(pairs.clean.shape[1:]), c.admin.seed)
            vae, _ = train_defense_vae(pairs, vae, self._train_config(c.vae.epochs, c.vae.batch_size, c.vae.lr))
            self.store.save_vae(vae, dataset)

    def retrain_rec(self) -> None:
        c = self.config
        for dataset in c.data.datasets:
            for arch in c.classifier.archs:
                name = self.store.bundle_name(dataset, arch, MODE_REC)
                if self.manifest.section(f"bundle:{name}") and not self.force:
                    logger.info(f"Skipping REC classifier {dataset}/{arch}: bundle '{name}' exists")
                    continue
                vae = self.store.load_vae(dataset, self._vae_spec())
                train = self.store.load_dataset(dataset, "train")
                model, _ = retrain_classifier_rec(vae, train, arch, self._train_config(c.classifier.epochs,
                                                                                      c.classifier.batch_size,
                                                                                      c.classifier.lr))
                self.store.save_bundle(DefenseBundle(vae, model, MODE_REC, {"dataset": dataset}), dataset, arch)

    def _finetune_base(self, dataset: str, arch: str) -> DefenseBundle:
        """The REC bundle when retrain-rec has produced one, else the original classifier with the VAE."""
        try:
            return self.store.load_bundle(dataset, arch, MODE_REC, self._vae_spec())
        except MissingArtifactError:
            logger.warning(f"No REC bundle for {dataset}/{arch}, finetuning starts from the original classifier")
            return self.store.load_bundle(dataset, arch, MODE_VAE, self._vae_spec())

    def finetune(self) -> None:
        c = self.config
        f = c.finetune
        cfg = FinetuneConfig(f.lam, f.epochs, f.batch_size, f.lr, c.admin.seed, f.validation, f.eval_eps,
                             c.admin.progress)
        for dataset in c.data.datasets:
            for arch in c.classifier.archs:
                name = self.store.bundle_name(dataset, arch, MODE_E2E)
                if self.manifest.section(f"bundle:{name}") and not self.force:
                    logger.info(f"Skipping E2E finetuning {dataset}/{arch}: bundle '{name}' exists")
                    continue
                base = self._finetune_base(dataset, arch)
                pairs = self.store.load_pairs(dataset)
                validation = self.store.load_dataset(dataset, "test")
                tuned, curve = finetune_e2e(base, pairs, cfg, validation)
                self.store.save_bundle(tuned, dataset, arch)
                write_finetune_curve(curve, self.store.report_path(f"finetune_curve_{dataset}_{arch}"))

    def eval_whitebox(self) -> None:
        c = self.config
        if self._skip(self.store.report_path("whitebox"), "white-box evaluation"):
            return
        attacks = list(self._test_attacks().values())
        cells = []
        grids = {}
        zsearch = ZSearchConfig(c.zsearch.steps, c.zsearch.restarts, c.zsearch.step_size, c.admin.seed)
        for dataset in c.data.datasets:
            test = self.store.load_dataset(dataset, "test")
            for arch in c.classifier.archs:
                cells.append(WhiteboxCell(dataset, arch, test, self.store.load_classifier(dataset, arch),
                                          self._bundles(dataset, arch)))
            bundle = self.store.load_bundle(dataset, c.vae.corpus_arch, MODE_VAE, self._vae_spec())
            for cfg in attacks:
                grids[f"{dataset}_{cfg.report_id}"] = collect_grid_samples(bundle, test.images, test.labels, cfg,
                                                                           zsearch, c.evaluation.grid_samples)
        report = run_whitebox_suite(cells, attacks, self.options)
        emit_artifacts([report], self.store, grids, c.to_parser())
        self.reports["whitebox"] = report

    def eval_leaveoneout(self) -> None:
        c = self.config
        if self._skip(self.store.report_path("leaveoneout"), "leave-one-out evaluation"):
            return
        arch = c.evaluation.leaveoneout_arch
        report = EvalReport("leaveoneout")
        for dataset in c.data.datasets:
            setup = LeaveOneOutSetup(
                dataset, arch, self._corpus_source(dataset), self.store.load_dataset(dataset, "test"),
                self.store.load_classifier(dataset, arch), self.store.load_pairs(dataset), self._vae_spec(),
                self._train_config(c.vae.epochs, c.vae.batch_size, c.vae.lr),
                self._train_config(c.classifier.epochs, c.classifier.batch_size, c.classifier.lr),
                {mode: b for mode, b in self._bundles(dataset, arch, required=False).items()
                 if mode in (MODE_VAE, MODE_REC)})
            modes = [m for m in (MODE_VAE, MODE_REC) if m in c.evaluation.modes]
            report.merge(run_leaveoneout_suite(setup, self._test_attacks(), (FGSM, RAND_FGSM, CW_L2),
                                               c.evaluation.deepfool_augment, modes, self.options,
                                               self._deepfool_attack()))
        emit_artifacts([report], self.store, config=c.to_parser())
        self.reports["leaveoneout"] = report

    def eval_blackbox(self) -> None:
        c = self.config
        b = c.blackbox
        if self._skip(self.store.report_path("blackbox"), "black-box evaluation"):
            return
        report = EvalReport("blackbox", with_average=True)
        setups = [BlackboxSetup(target, substitute, b.queries, b.rounds, b.step, b.epochs, b.eps, c.admin.seed)
                  for target in b.targets for substitute in b.substitutes]
        for dataset in c.data.datasets:
            targets = {t: self.store.load_classifier(dataset, t) for t in b.targets}
            bundles = {t: self._bundles(dataset, t) for t in b.targets}
            report.merge(run_blackbox_suite(setups, dataset, self.store.load_dataset(dataset, "test"), targets,
                                            bundles, self.options))
        emit_artifacts([report], self.store, config=c.to_parser())
        self.reports["blackbox"] = report

    def bench_speed(self) -> None:
        c = self.config
        if self._skip(self.store.report_path("speed_timing"), "speed benchmark"):
            return
        dataset = c.data.datasets[0]
        bundle = self.store.load_bundle(dataset, c.vae.corpus_arch, MODE_VAE, self._vae_spec())
        test = self.store.load_dataset(dataset, "test").head(c.zsearch.bench_images)
        attacked = attack_dataset(bundle.classifier, test.images, test.labels, AttackConfig(FGSM, eps=c.fgsm.eps),
                                  c.evaluation.batch_size, 1, c.admin.progress).x_adv
        report = run_speed_bench(bundle, attacked, test.labels if c.zsearch.measure_accuracy else None,
                                 c.zsearch.bench_pairs, c.admin.seed, c.zsearch.step_size)
        emit_artifacts([report], self.store, config=c.to_parser())
        self.reports["speed"] = report

    def purify_image(self, image_path: str) -> str:
        """Purify one PGM image with the first dataset's Defense-VAE; writes '<stem>_purified.pgm' beside it."""
        if not os.path.exists(image_path):
            raise FileNotFoundError(f"Input image {image_path} does not exist")
        image = read_pgm(image_path)
        vae = self.store.load_vae(self.config.data.datasets[0], self._vae_spec(image.shape))
        purified = purify(vae, image[None])[0]
        target = f"{os.path.splitext(image_path)[0]}_purified.pgm"
        write_pgm(purified, target)
        logger.info(f"Wrote purified image to {target}")
        return target

    def reproduce_all(self) -> None:
        for command in REPRODUCE_STEPS:
            logger.info(f"reproduce-all: {command}")
            self.handlers[command]()
        if not self.config.acceptance.enabled:
            return
        missing = [name for name in ("whitebox", "blackbox", "speed") if name not in self.reports]
        if missing:
            logger.warning(f"Acceptance skips {missing}: their reports were not recomputed in this run")
        enforce_acceptance(self.config.criteria(), self.reports.get("whitebox"), self.reports.get("blackbox"),
                           self.reports.get("leaveoneout"), self.reports.get("speed"))


def usage() -> str:
    return "usage: app.py [options] {" + ",".join(COMMANDS) + "} [image]"


def dispatch(command: str, config: RunConfig, force: bool = False, image: Optional[str] = None) -> int:
    """
    Run one command.

    Returns:
        0 success, 1 usage or configuration error, 2 runtime failure,
        3 acceptance threshold violated
    """
    if command not in COMMANDS:
        logger.error(f"Unknown command '{command}'\n{usage()}")
        return EXIT_CONFIG
    if command == "purify-image" and not image:
        logger.error(f"purify-image needs an input image\n{usage()}")
        return EXIT_CONFIG
    try:
        set_precision(config.admin.precision)
        runner = ExperimentRunner(config, force)
        runner.manifest.merge_parser(config.to_parser())
        if command == "purify-image":
            runner.purify_image(image)
        else:
            runner.handlers[command]()
    except (ConfigError, BlackboxSetupError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except AcceptanceError as e:
        logger.error(f"Acceptance thresholds violated: {len(e.violations)}")
        return EXIT_ACCEPTANCE
    except Exception as e:
        logger.error(f"Error in '{command}': {e}")
        logger.debug("Traceback", exc_info=True)
        return EXIT_RUNTIME
    logger.info(f"'{command}' finished")
    return EXIT_OK
