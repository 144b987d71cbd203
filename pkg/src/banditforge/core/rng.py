"""Splittable, counter-based random keys.

A :class:`Rng` is an immutable key (root seed plus a path of integers).
Children are derived by appending to the path, so a stream never depends on
how many numbers were drawn from a sibling or in which order siblings were
consumed.  Sampling goes through a Philox generator seeded from the key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Rng:
    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def fold(self, *keys: int) -> Rng:
        """Child key addressed by ``keys`` (like ``fold_in``)."""
        return Rng(self.seed, self.path + tuple(int(k) for k in keys))

    def split(self, k: int) -> list[Rng]:
        return [self.fold(i) for i in range(k)]

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    def integer_seed(self) -> int:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.path)
        return int(ss.generate_state(2, np.uint32).view(np.uint64)[0])


def as_rng(seed: int | Rng) -> Rng:
    return seed if isinstance(seed, Rng) else Rng(int(seed))
