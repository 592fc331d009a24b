"""Seeded, splittable random streams used by every stochastic operation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _hash64(*parts) -> int:
    """Stable 64-bit hash of a mixed tuple of ints/strings/bytes."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, bytes):
            h.update(b"b")
            h.update(p)
        elif isinstance(p, str):
            h.update(b"s")
            h.update(p.encode("utf-8"))
        elif isinstance(p, (int, np.integer)):
            h.update(b"i")
            h.update(int(p & _MASK64).to_bytes(8, "little"))
        else:
            raise TypeError(f"unhashable stream label part: {type(p)!r}")
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class SamplerSeed:
    """Root of a reproducible random stream.

    ``seed`` identifies the run, ``stream`` the substream within it. Two
    SamplerSeeds with different streams yield statistically independent
    Philox sequences, so parallel work units can each own a pre-split
    stream and produce schedule-independent results.
    """

    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream", int(self.stream) & _MASK64)

    def split(self, *label) -> "SamplerSeed":
        """Derive a child stream keyed by a label (strings and/or ints)."""
        return SamplerSeed(self.seed, _hash64(self.stream, *label))

    def generator(self) -> np.random.Generator:
        """Fresh counter-based generator for this (seed, stream) pair."""
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))
