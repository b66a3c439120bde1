"""
Defense-VAE model: convolutional encoder, mean/log-variance heads and a
transposed-convolution decoder ending in a sigmoid.
"""
import contextlib
import copy
import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from src.autodiff.functional import bce_pixels, kl_diag_gaussian, mse
from src.autodiff.random import rng_stream
from src.autodiff.tensor import DimensionError, Tensor
from src.models.layers import (VAE_DECODER_ROWS, VAE_ENCODER_ROWS, VAE_HEAD_ROW, parse_row, parse_rows,
                               render_rows)
from src.models.network import INIT_NORMAL, Network

logger = logging.getLogger(__name__)

LIKELIHOODS = ("bernoulli", "gaussian")
Noise = Union[None, int, np.random.Generator]


@dataclass(frozen=True)
class VaeSpec:
    """
    Architecture of a Defense-VAE.

    Attributes:
        encoder_rows: convolutional encoder rows, ending in a (C, H, W) map
        head_row: 'FC1(d, k), FC2(d, k)', the mu and logvar heads
        decoder_rows: latent -> image rows, last layer a Sigmoid
        latent_dim: size of z
        image_shape: (C, H, W) of inputs and reconstructions
        likelihood: 'bernoulli' (pixel BCE) or 'gaussian' (squared error)
    """
    encoder_rows: Tuple[str, ...] = tuple(VAE_ENCODER_ROWS)
    head_row: str = VAE_HEAD_ROW
    decoder_rows: Tuple[str, ...] = tuple(VAE_DECODER_ROWS)
    latent_dim: int = 128
    image_shape: Tuple[int, int, int] = (1, 28, 28)
    likelihood: str = "bernoulli"

    def __post_init__(self):
        if self.likelihood not in LIKELIHOODS:
            raise ValueError(f"Unknown likelihood '{self.likelihood}', expected one of {LIKELIHOODS}")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")


class VaeOutput(NamedTuple):
    mu: Tensor
    logvar: Tensor
    z: Tensor
    x_rec: Tensor


class ElboLoss(NamedTuple):
    total: Tensor
    reconstruction: Tensor
    kl: Tensor


class VAE:
    """
    Encoder, heads and decoder as three Networks.

    Parameters are exposed under the 'encoder.', 'mu.', 'logvar.' and
    'decoder.' prefixes.
    """

    def __init__(self, spec: VaeSpec, seed: int = 0):
        self.spec = spec
        self.metadata: Dict[str, object] = {}
        channels = spec.image_shape[0]
        self.encoder = Network(parse_rows(spec.encoder_rows), spec.image_shape, channels, name="encoder",
                               seed=seed, init=INIT_NORMAL)
        heads = parse_row(spec.head_row)
        if [h.kind for h in heads] != ["FC1", "FC2"]:
            raise DimensionError(f"VAE head row must read 'FC1(d, k), FC2(d, k)', got '{spec.head_row}'")
        self.mu_head = Network(heads[:1], self.encoder.output_shape, channels, name="mu", seed=seed, init=INIT_NORMAL)
        self.logvar_head = Network(heads[1:], self.encoder.output_shape, channels, name="logvar", seed=seed,
                                   init=INIT_NORMAL)
        for head in (self.mu_head, self.logvar_head):
            if head.output_shape != (spec.latent_dim,):
                raise DimensionError(f"VAE head '{head.descriptor[0]}' emits {head.output_shape}, "
                                     f"latent_dim is {spec.latent_dim}")
        decoder_specs = parse_rows(spec.decoder_rows)
        if not decoder_specs or decoder_specs[-1].kind != "Sigmoid":
            raise DimensionError("VAE decoder must end in a Sigmoid")
        self.decoder = Network(decoder_specs, (spec.latent_dim,), channels, name="decoder", seed=seed,
                               init=INIT_NORMAL)
        if self.decoder.output_shape != tuple(spec.image_shape):
            raise DimensionError(f"VAE decoder emits {self.decoder.output_shape}, image shape is {spec.image_shape}")

    @property
    def parts(self) -> Dict[str, Network]:
        return {"encoder": self.encoder, "mu": self.mu_head, "logvar": self.logvar_head, "decoder": self.decoder}

    @property
    def descriptor(self) -> List[str]:
        return render_rows(self.encoder.specs + self.mu_head.specs + self.logvar_head.specs + self.decoder.specs)

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.spec.image_shape)

    def encode(self, x: Tensor, training: bool = False) -> Tuple[Tensor, Tensor]:
        h = self.encoder.forward(x, training)
        return self.mu_head.forward(h, training), self.logvar_head.forward(h, training)

    def decode(self, z: Tensor, training: bool = False) -> Tensor:
        return self.decoder.forward(z, training)

    def forward(self, x: Tensor, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        return vae_forward(self, x, noise=rng, training=training).x_rec

    __call__ = forward

    def parameters(self) -> Dict[str, Tensor]:
        return {f"{prefix}.{name}": p for prefix, net in self.parts.items() for name, p in net.parameters().items()}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {f"{prefix}.{name}": b for prefix, net in self.parts.items() for name, b in net.buffers().items()}

    def load_buffers(self, buffers: Dict[str, np.ndarray]) -> None:
        for prefix, net in self.parts.items():
            net.load_buffers({k[len(prefix) + 1:]: v for k, v in buffers.items() if k.startswith(prefix + ".")})

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    @contextlib.contextmanager
    def frozen(self) -> Iterator["VAE"]:
        with contextlib.ExitStack() as stack:
            for net in self.parts.values():
                stack.enter_context(net.frozen())
            yield self

    def clone(self) -> "VAE":
        twin = copy.copy(self)
        twin.encoder, twin.mu_head = self.encoder.clone(), self.mu_head.clone()
        twin.logvar_head, twin.decoder = self.logvar_head.clone(), self.decoder.clone()
        twin.metadata = copy.deepcopy(self.metadata)
        return twin

    def __repr__(self) -> str:
        return f"VAE({self.spec.image_shape}, latent={self.spec.latent_dim}, {self.parameter_count()} params)"


def build_vae(spec: Optional[VaeSpec] = None, seed: int = 0) -> VAE:
    """
    Build a Defense-VAE. Conv, transposed-conv and dense weights are drawn from
    N(0, 0.02^2); batch-norm scales from N(1, 0.02^2); biases and shifts are 0.
    """
    vae = VAE(spec or VaeSpec(), seed)
    logger.debug(f"Built {vae}")
    return vae


def _noise(noise: Noise, shape: Tuple[int, ...]) -> Optional[np.ndarray]:
    if noise is None:
        return None
    rng = rng_stream(noise, "reparameterize") if isinstance(noise, (int, np.integer)) else noise
    return rng.standard_normal(shape)


def vae_forward(vae: VAE, x_in: Tensor, noise: Noise = None, training: bool = False,
                eps: Optional[np.ndarray] = None) -> VaeOutput:
    """
    Encode, reparameterize and decode.

    Args:
        vae: the model
        x_in: images (N, C, H, W) in [0, 1]
        noise: seed or generator for eps ~ N(0, I); None means z = mu
        training: batch-norm uses batch statistics and updates running ones
        eps: explicit noise, overrides noise

    Returns:
        VaeOutput(mu, logvar, z, x_rec) with z = mu + exp(logvar / 2) * eps
    """
    mu, logvar = vae.encode(x_in, training)
    if eps is None:
        eps = _noise(noise, mu.shape)
    if eps is None:
        z = mu
    else:
        eps = np.asarray(eps, dtype=mu.dtype)
        if eps.shape != mu.shape:
            raise DimensionError(f"noise shape {eps.shape} does not match latent {mu.shape}")
        z = mu + (logvar * 0.5).exp() * Tensor(eps, dtype=mu.dtype)
    return VaeOutput(mu, logvar, z, vae.decode(z, training))


def vae_elbo_loss(mu: Tensor, logvar: Tensor, x_rec: Tensor, x_target, likelihood: str = "bernoulli") -> ElboLoss:
    """
    Negative ELBO of reconstructing x_target: reconstruction term (pixel BCE or
    squared error, summed over pixels) plus KL to N(0, I), both batch-averaged.
    """
    if likelihood == "bernoulli":
        reconstruction = bce_pixels(x_rec, x_target)
    elif likelihood == "gaussian":
        reconstruction = mse(x_rec, x_target)
    else:
        raise ValueError(f"Unknown likelihood '{likelihood}'")
    kl = kl_diag_gaussian(mu, logvar)
    return ElboLoss(reconstruction + kl, reconstruction, kl)
