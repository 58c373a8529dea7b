"""Seeded counter-based random source.

All randomness in the package flows through `Rng`, which wraps numpy's
Philox counter-based bit generator. A (seed, stream) pair fully determines
every draw, so runs are bit-reproducible across processes and platforms.
"""

from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def child(self, stream: int) -> "Rng":
        """Independent stream derived from the same seed."""
        return Rng(self.seed, self.stream * 1009 + stream)

    def normal(self, shape, std: float = 1.0, mean: float = 0.0, dtype=np.float32) -> np.ndarray:
        return (mean + std * self._gen.standard_normal(size=shape)).astype(dtype, copy=False)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0, dtype=np.float32) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(dtype, copy=False)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def shuffled(self, n: int) -> np.ndarray:
        perm = np.arange(n)
        self._gen.shuffle(perm)
        return perm
