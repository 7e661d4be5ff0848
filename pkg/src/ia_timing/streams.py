"""Keyed RNG streams.

A stream is identified by (master seed, purpose tag, n', block index). The key
goes straight into ``SeedSequence.spawn_key``, so streams never depend on how
many other streams exist or on the order in which they are created.
"""
from __future__ import annotations

import zlib

import numpy as np


def tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, tag: str, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag_code(tag), *map(int, key)))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, tag: str, *key: int) -> int:
    """A 64-bit integer seed derived from the same key layout."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag_code(tag), *map(int, key)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
