"""Seeded randomness with labeled, independent substreams.

Substream mixing is keyed BLAKE2b: child_seed = blake2b(label, key=parent_seed).
That keeps every stream a pure function of (master seed, label path), so a
repeated run with the same seed replays the exact same draws regardless of
call order elsewhere in the program.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix(seed: int, label: str) -> int:
    digest = hashlib.blake2b(
        label.encode("utf-8"),
        key=(seed & _MASK64).to_bytes(8, "little"),
        digest_size=8,
    ).digest()
    return int.from_bytes(digest, "little")


class SeededRng:
    """A numpy Generator plus the seed arithmetic for derived streams."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.gen = np.random.default_rng(self.seed)

    def derive(self, label: str) -> "SeededRng":
        """Independent stream for a named subsystem (e.g. "synth", "run3")."""
        return SeededRng(_mix(self.seed, label))

    # Thin delegation; keeps call sites short.
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def random(self, size=None):
        return self.gen.random(size)

    def shuffle(self, x) -> None:
        self.gen.shuffle(x)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def __repr__(self) -> str:  # pragma: no cover
        return f"SeededRng(seed={self.seed})"
