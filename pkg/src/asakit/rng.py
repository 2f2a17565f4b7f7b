"""Named RNG streams derived from a single experiment seed.

Every source of randomness in the toolkit pulls from its own named stream
(codec-init, data-shuffle, policy-init, env, ...) so that changing how one
consumer draws numbers cannot perturb any other consumer.
"""

import zlib

import numpy as np

__all__ = ["stream", "episode_stream"]


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for the stream `name`, fully determined by (seed, name)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _key(name)]))


def episode_stream(seed: int, name: str, episode: int) -> np.random.Generator:
    """Per-episode generator: independent of draws made for other episodes."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), _key(name), int(episode)])
    )
