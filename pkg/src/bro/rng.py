"""Hierarchical random substreams.

Every random draw in the package descends from one integer master seed.
A stream is addressed by a key path, e.g. ``(command, replication, iteration)``,
and is built from :class:`numpy.random.SeedSequence` with that path as its
spawn key, so sibling streams are statistically independent and a stream's
contents never depend on which other streams were consumed first.
"""

from __future__ import annotations

import zlib

import numpy as np

Key = int | str


def _key_int(k: Key) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    if k < 0:
        raise ValueError(f"stream keys must be non-negative, got {k}")
    return int(k)


def seed_sequence(seed: int, *key: Key) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_int(k) for k in key))


def substream(seed: int, *key: Key) -> np.random.Generator:
    """Return the generator at ``seed / key[0] / key[1] / ...``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *key)))


def derive_seed(seed: int, *key: Key) -> int:
    """Collapse a stream address into a plain 63-bit integer seed."""
    return int(seed_sequence(seed, *key).generate_state(1, np.uint64)[0] >> np.uint64(1))
