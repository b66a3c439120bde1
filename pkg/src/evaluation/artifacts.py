"""
Report files, reconstruction grids and the run manifest.
"""
import csv
import logging
import os
from configparser import ConfigParser
from typing import List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from src.attacks.config import AttackConfig
from src.attacks.corpus import run_attack
from src.data_io.images import write_image_grid
from src.data_io.reports import format_percent, write_csv_report, write_timing_csv
from src.defense.bundle import DefenseBundle
from src.defense.pipeline import FinetuneCurve, purify
from src.defense.zsearch import ZSearchConfig, zsearch_purify
from src.evaluation.report import EvalReport
from src.evaluation.store import ArtifactStore
from src.utils import exclusive_lock

logger = logging.getLogger(__name__)

GRID_COLUMNS = 8
FINETUNE_HEADER = ["epoch", "validation_accuracy", "joint_loss"]


class GridSamples(NamedTuple):
    """Rows of a reconstruction grid, each (n, C, H, W)."""
    clean: np.ndarray
    adversarial: np.ndarray
    zsearch: np.ndarray
    purified: np.ndarray


def collect_grid_samples(bundle: DefenseBundle, images: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
                         zsearch: ZSearchConfig, count: int = GRID_COLUMNS) -> GridSamples:
    """Attack the first `count` images and reconstruct them with z-search and the Defense-VAE."""
    clean = images[:count]
    with bundle.classifier.frozen():
        adversarial = run_attack(bundle.classifier, clean, labels[:count], cfg).x_adv
    return GridSamples(clean, adversarial, zsearch_purify(bundle.vae, adversarial, zsearch).images,
                       purify(bundle.vae, adversarial))


def write_grid(samples: GridSamples, path: str) -> None:
    """Four grid rows: clean, adversarial, z-search, Defense-VAE."""
    tiles = [image for row in samples for image in row]
    write_image_grid(tiles, len(samples.clean), path)


def write_finetune_curve(curve: FinetuneCurve, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with exclusive_lock(path), open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(FINETUNE_HEADER)
        for epoch, accuracy in zip(curve.epochs, curve.accuracy):
            loss = f"{curve.losses[epoch - 1]:.6f}" if 0 < epoch <= len(curve.losses) else ""
            writer.writerow([epoch, format_percent(accuracy), loss])
    logger.info(f"Wrote finetune curve to {path}")


def emit_artifacts(reports: Sequence[EvalReport], store: ArtifactStore,
                   grids: Optional[Mapping[str, GridSamples]] = None,
                   config: Optional[ConfigParser] = None) -> List[str]:
    """
    Write every report as CSV, every grid as PGM, and record report metadata
    and the resolved config in the manifest.

    Returns:
        written file paths

    Raises:
        ValueError: a report has neither accuracy nor timing rows
    """
    written = []
    for report in reports:
        if report.is_empty():
            raise ValueError(f"report '{report.name}' is empty")
        if report.rows:
            written.append(store.report_path(report.name))
            write_csv_report(report, written[-1])
        if report.timings:
            written.append(store.report_path(f"{report.name}_timing"))
            write_timing_csv(report, written[-1])
        if report.metadata:
            store.manifest.update(f"report:{report.name}", report.metadata)
    for name, samples in (grids or {}).items():
        written.append(store.grid_path(name))
        write_grid(samples, written[-1])
    if config is not None:
        store.manifest.merge_parser(config)
    store.manifest.set("artifacts", "files", ", ".join(written))
    logger.info(f"Emitted {len(written)} artifacts under {store.output_dir}")
    return written
