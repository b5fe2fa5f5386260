"""Deterministic, splittable random streams.

A stream is fully determined by its 64-bit seed. Substreams derive from
(seed, label), so weight init, dataset records, and per-image augmentation
can each draw independently without coordinating a shared cursor. Two Rng
instances with the same seed produce bit-identical draw sequences, and
split(label) is a pure function of (seed, label).
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def split(self, label) -> "Rng":
        """Independent substream derived from (seed, label).

        Does not advance this stream; calling split twice with the same
        label returns streams with identical output.
        """
        digest = hashlib.blake2b(
            f"{self.seed}:{label}".encode(), digest_size=8
        ).digest()
        return Rng(int.from_bytes(digest, "little"))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int):
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed})"
