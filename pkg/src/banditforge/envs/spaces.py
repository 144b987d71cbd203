from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Discrete:
    n: int

    @property
    def encoding_dim(self) -> int:
        return self.n

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        return gen.integers(0, self.n, size)

    def contains(self, action) -> bool:
        a = np.asarray(action)
        return bool(np.all((a == np.round(a)) & (a >= 0) & (a < self.n)))


@dataclass(frozen=True)
class Box:
    low: tuple[float, ...]
    high: tuple[float, ...]

    @property
    def shape(self) -> tuple[int]:
        return (len(self.low),)

    @property
    def encoding_dim(self) -> int:
        return len(self.low)

    @property
    def low_arr(self) -> np.ndarray:
        return np.asarray(self.low, dtype=np.float64)

    @property
    def high_arr(self) -> np.ndarray:
        return np.asarray(self.high, dtype=np.float64)

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        return gen.uniform(self.low_arr, self.high_arr, (size, len(self.low)))

    def contains(self, action) -> bool:
        a = np.asarray(action, dtype=np.float64)
        return bool(np.all(np.isfinite(a) & (a >= self.low_arr) & (a <= self.high_arr)))


ActionSpace = Discrete | Box


def is_discrete(space) -> bool:
    return isinstance(space, Discrete)
