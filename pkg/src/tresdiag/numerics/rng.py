"""Seeded random streams.

Every stream is a numpy ``Generator`` over PCG64 seeded through
``SeedSequence(seed, spawn_key=path)``.  A child stream is addressed by its
path from the root seed, so it does not depend on how much randomness any
sibling has already consumed.  String keys are mapped to integers with
CRC-32 so named streams ("init", "shuffle", ...) are stable across runs.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k: int | str) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    if k < 0:
        raise ValueError("stream index must be non-negative")
    return int(k)


class Rng:
    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.path = tuple(path)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.path)))

    def child(self, key: int | str) -> Rng:
        return Rng(self.seed, self.path + (_key(key),))

    def derive_seed(self, key: int | str) -> int:
        """A 64-bit integer seed for an independent stream at ``key``."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path + (_key(key),))
        lo, hi = ss.generate_state(2, dtype=np.uint32)
        return int(lo) | (int(hi) << 32)

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(shape)

    def uniform(self, low=0.0, high=1.0, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def normal(self, loc=0.0, scale=1.0, shape=None) -> np.ndarray:
        return self._gen.normal(loc, scale, shape)

    def integers(self, low, high=None, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"
