"""Seed derivation: one master seed, independent named streams.

Streams use numpy's counter-based Philox generator keyed through
``SeedSequence`` spawn keys, so ``stream(7, "teacher", "init")`` is stable
across runs and independent of ``stream(7, "student", "init")``.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(master_seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(_key(k) for k in keys))


def stream(master_seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(master_seed, *keys)))


def derive_seed(master_seed: int, *keys) -> int:
    """A 63-bit integer seed for the named sub-stream."""
    return int(seed_sequence(master_seed, *keys).generate_state(1, np.uint64)[0] >> np.uint64(1))
