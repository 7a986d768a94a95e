"""Deterministic named random streams.

Every consumer of randomness (parameter init, Gumbel noise, dropout
masks, data splits) draws from its own stream keyed by (seed, name), so
adding or removing one consumer never shifts the draws of another.
"""

from __future__ import annotations

import numpy as np


def named_rng(seed: int, name: str) -> np.random.Generator:
    """A fresh generator for this (seed, name) pair; stable across runs."""
    return np.random.default_rng([int(seed)] + list(name.encode("utf-8")))


class NoiseStreams:
    """Lazily created named generators, consumed sequentially across epochs."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        rng = self._streams.get(name)
        if rng is None:
            rng = named_rng(self.seed, name)
            self._streams[name] = rng
        return rng
