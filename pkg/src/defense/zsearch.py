"""
Optimization-based purification baseline: search the latent space of a fixed
decoder for the image closest to the input.

For each of R restarts, z starts from N(0, I) and takes L plain gradient
descent steps on ||decode(z) - x||^2. The restart with the lowest final
objective is kept per image.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Tuple, Union

import numpy as np

from src.autodiff.random import rng_stream
from src.autodiff.tensor import Tape, Tensor, backward, no_grad
from src.models.network import Network
from src.models.vae import VAE
from src.utils import Stopwatch, batch_slices

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ZSearchConfig:
    """
    Attributes:
        steps: gradient steps per restart (L), >= 0
        restarts: random initializations (R), >= 1
        step_size: gradient descent step on z
        seed: seed of the initialization streams
        batch_size: images per worker batch
        threads: worker threads over batches
    """
    steps: int = 200
    restarts: int = 10
    step_size: float = 0.01
    seed: int = 0
    batch_size: int = 100
    threads: int = 1

    def __post_init__(self):
        if self.steps < 0 or self.restarts < 1:
            raise ValueError(f"z-search needs steps >= 0 and restarts >= 1, got L={self.steps}, R={self.restarts}")
        if self.step_size <= 0:
            raise ValueError("z-search step_size must be positive")


class ZSearchResult(NamedTuple):
    """
    images: decoded best z per image
    objectives: final ||decode(z*) - x||^2 per image
    trace: mean objective per (restart, step), shape (R, L + 1)
    wall_time_s: search wall time
    """
    images: np.ndarray
    objectives: np.ndarray
    trace: np.ndarray
    wall_time_s: float


def _objective(decoder: Network, z: Tensor, x: np.ndarray) -> Tensor:
    """Per-image squared error, summed over the batch."""
    return (decoder.forward(z, training=False) - Tensor(x, dtype=z.dtype)).square().sum()


def _per_image(decoder: Network, z: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    with no_grad():
        images = decoder.forward(Tensor(z), training=False).data
    return images, ((images - x) ** 2).reshape(len(x), -1).sum(axis=1)


def _search_batch(decoder: Network, x: np.ndarray, cfg: ZSearchConfig, batch_index: int):
    latent = decoder.input_shape[0]
    best_images = np.zeros_like(x)
    best = np.full(len(x), np.inf)
    trace = np.zeros((cfg.restarts, cfg.steps + 1))
    for restart in range(cfg.restarts):
        rng = rng_stream(cfg.seed, "zsearch", batch_index, restart)
        z = Tensor(rng.standard_normal((len(x), latent)), requires_grad=True)
        for step in range(cfg.steps):
            with Tape():
                loss = _objective(decoder, z, x)
                backward(loss)
            trace[restart, step] = float(loss.data) / len(x)
            z.data = z.data - cfg.step_size * z.grad
            z.grad = None
        images, objective = _per_image(decoder, z.data, x)
        trace[restart, cfg.steps] = objective.mean()
        better = objective < best
        best[better] = objective[better]
        best_images[better] = images[better]
    return best_images, best, trace


def zsearch_purify(decoder: Union[VAE, Network], x_adv: np.ndarray, cfg: ZSearchConfig) -> ZSearchResult:
    """
    Purify x_adv by latent search through decoder (a VAE's decoder is used when a VAE is given).
    Cost grows with steps * restarts per image.
    """
    if isinstance(decoder, VAE):
        decoder = decoder.decoder
    slices = batch_slices(len(x_adv), cfg.batch_size)
    with Stopwatch() as timer, decoder.frozen():
        if cfg.threads <= 1:
            parts = [_search_batch(decoder, x_adv[s], cfg, i) for i, s in enumerate(slices)]
        else:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                futures = [pool.submit(_search_batch, decoder, x_adv[s], cfg, i) for i, s in enumerate(slices)]
                parts = [f.result() for f in futures]
    images = np.concatenate([p[0] for p in parts]).astype(x_adv.dtype)
    objectives = np.concatenate([p[1] for p in parts])
    weights = np.array([len(p[1]) for p in parts], dtype=np.float64)
    trace = np.tensordot(weights / weights.sum(), np.stack([p[2] for p in parts]), axes=1)
    logger.info(f"z-search L={cfg.steps} R={cfg.restarts} on {len(x_adv)} images: "
                f"mean objective {objectives.mean():.4f}, {timer.elapsed:.2f}s")
    return ZSearchResult(images, objectives, trace, timer.elapsed)
