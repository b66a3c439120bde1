"""
Wall-clock comparison of single-pass purification with latent z-search.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from src.defense.bundle import DefenseBundle
from src.defense.pipeline import purify
from src.defense.zsearch import ZSearchConfig, zsearch_purify
from src.evaluation.report import EvalReport, TimingRow
from src.models.classifiers import predict_labels
from src.utils import Stopwatch

logger = logging.getLogger(__name__)

ZSEARCH_CONFIGS = ((200, 10), (400, 10), (200, 20), (400, 20))
PURIFY_METHOD = "defense_vae"
ZSEARCH_METHOD = "zsearch"


def _accuracy(bundle: DefenseBundle, images: np.ndarray, labels: Optional[np.ndarray]) -> Optional[float]:
    if labels is None:
        return None
    return float(np.mean(predict_labels(bundle.classifier, images) == labels))


def run_speed_bench(bundle: DefenseBundle, images: np.ndarray, labels: Optional[np.ndarray] = None,
                    configs: Sequence[Tuple[int, int]] = ZSEARCH_CONFIGS, seed: int = 0,
                    step_size: float = 0.01) -> EvalReport:
    """
    Time purify and zsearch_purify on the same images, both on one thread.

    Args:
        bundle: trained Defense-VAE (its decoder drives the z-search) and classifier
        images: benchmark images, typically 1000 adversarial test images
        labels: when given, each row also records classifier accuracy on the output
        configs: (steps, restarts) of each z-search row
        seed: z-search initialization seed
        step_size: z-search gradient step

    Returns:
        report holding one timing row per method and configuration
    """
    report = EvalReport("speed")
    report.metadata.update({"n_images": str(len(images)), "seed": str(seed), "threads": "1",
                            "zsearch_optimizer": f"gradient descent, step {step_size:g}"})
    with Stopwatch() as timer:
        purified = purify(bundle.vae, images, threads=1)
    report.timings.append(TimingRow(PURIFY_METHOD, 0, 1, len(images), timer.elapsed,
                                    _accuracy(bundle, purified, labels)))
    logger.info(f"purify on {len(images)} images: {timer.elapsed:.2f}s")

    for steps, restarts in configs:
        cfg = ZSearchConfig(steps=steps, restarts=restarts, step_size=step_size, seed=seed, threads=1)
        result = zsearch_purify(bundle.vae, images, cfg)
        report.timings.append(TimingRow(ZSEARCH_METHOD, steps, restarts, len(images), result.wall_time_s,
                                        _accuracy(bundle, result.images, labels)))
        logger.info(f"zsearch L={steps} R={restarts}: {result.wall_time_s:.2f}s, "
                    f"{result.wall_time_s / max(timer.elapsed, 1e-12):.1f}x purify")
    return report
