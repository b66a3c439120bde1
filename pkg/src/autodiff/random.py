"""
Seeded random streams.

Every stochastic site (weight init, dropout, shuffling, reparameterization,
attack noise, z-search restarts, worker batches) asks for its own stream keyed
by the run seed plus a tuple of names/indices. Streams use the counter-based
Philox generator, so the same (seed, keys) always reproduces the same draws no
matter which thread asks or in which order.
"""
import zlib
from typing import Tuple, Union

import numpy as np

Key = Union[str, int]


def _key_words(keys: Tuple[Key, ...]) -> Tuple[int, ...]:
    words = []
    for key in keys:
        if isinstance(key, str):
            words.append(zlib.crc32(key.encode("utf-8")))
        else:
            words.append(int(key) & 0xFFFFFFFF)
    return tuple(words)


def rng_stream(seed: int, *keys: Key) -> np.random.Generator:
    """
    Return an independent generator for (seed, *keys).

    Args:
        seed: run seed from the config
        keys: names and indices identifying the stochastic site

    Returns:
        numpy Generator on a Philox bit generator
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=_key_words(keys))
    return np.random.Generator(np.random.Philox(sequence))
