"""Seeded counter-based randomness.

Every stochastic operation in the package draws from a ``RandomStream``.
Streams are backed by the Philox counter-based generator, so a (seed, lane)
pair fully determines the draw sequence on any platform; substreams are
derived by lane arithmetic rather than by consuming parent state, which keeps
per-batch / per-series splitting deterministic regardless of call order.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation

_LANE_MIX = 0x9E3779B97F4A7C15  # splitmix64 increment, decorrelates child lanes


class RandomStream:
    """Deterministic random source; identical (seed, lane) => identical draws."""

    def __init__(self, seed: int, lane: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.lane = int(lane) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.lane], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, tag: int) -> "RandomStream":
        """Derive an independent substream; same (stream, tag) => same substream."""
        child = (self.lane * _LANE_MIX + int(tag) + 1) & 0xFFFFFFFFFFFFFFFF
        return RandomStream(self.seed, child)

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(size=shape, dtype=np.float64)

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def bernoulli(self, p: float, shape=()) -> np.ndarray:
        if not 0.0 <= p <= 1.0:
            raise ContractViolation(f"bernoulli p must lie in [0, 1], got {p}")
        return (self._gen.random(size=shape, dtype=np.float64) < p).astype(np.float64)

    def draw(self, distribution: str, shape=(), p: float = 0.5) -> np.ndarray:
        if distribution == "uniform":
            return self.uniform(shape)
        if distribution == "standard-normal":
            return self.normal(shape)
        if distribution == "bernoulli":
            return self.bernoulli(p, shape)
        raise ContractViolation(f"unknown distribution {distribution!r}")

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        if high <= low:
            raise ContractViolation(f"empty integer range [{low}, {high})")
        return self._gen.integers(low, high, size=shape, dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def distinct_sorted(self, n: int, k: int) -> np.ndarray:
        """k distinct values from {0..n-1}, sorted ascending, uniform over k-subsets."""
        if k > n:
            raise ContractViolation(f"cannot draw {k} distinct values from {n}")
        picked = self._gen.choice(n, size=k, replace=False)
        return np.sort(picked)
