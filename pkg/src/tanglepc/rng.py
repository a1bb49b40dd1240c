"""Named, independent random streams derived from one master seed."""

from __future__ import annotations

import random
import zlib

import numpy as np


def _seed_sequence(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(name.encode()),))


def stream(seed: int, name: str) -> random.Random:
    """Scalar RNG for one concern (``"arrivals"``, ``"tips"``, ``"walks"``, ...).

    Streams with different names never share state, so switching one concern
    on or off leaves the draws of every other concern untouched.
    """
    state = _seed_sequence(seed, name).generate_state(2, dtype=np.uint64)
    return random.Random((int(state[0]) << 64) | int(state[1]))


def np_stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(_seed_sequence(seed, name))


def derive_seed(seed: int, name: str, index: int = 0) -> int:
    """A child seed, e.g. one per trial of a campaign."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(name.encode()), index))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
