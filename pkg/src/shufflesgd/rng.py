"""Seedable randomness.

Every random decision in the package flows through :class:`RandomnessSource`,
a thin wrapper over numpy's PCG64 bit generator. PCG64 output for a given
seed is fixed by numpy's stability policy and is identical across platforms.
Child streams are derived with :func:`derive_seed`, which feeds the key path
through ``numpy.random.SeedSequence``.
"""

from __future__ import annotations

import numpy as np


def derive_seed(seed: int, *keys: int) -> np.random.SeedSequence:
    """Seed sequence for the child stream identified by ``(seed, *keys)``.

    Pure function of its arguments, so any stream can be replayed without
    storing it.
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seeds and keys must be non-negative integers")
    return np.random.SeedSequence([int(seed), *map(int, keys)])


class RandomnessSource:
    def __init__(self, seed: int = 0, *keys: int):
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        self.generator = np.random.Generator(np.random.PCG64(derive_seed(self.seed, *self.keys)))

    def child(self, *keys: int) -> "RandomnessSource":
        return RandomnessSource(self.seed, *self.keys, *keys)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def __repr__(self):
        return f"RandomnessSource(seed={self.seed}, keys={self.keys})"


def as_source(rng) -> RandomnessSource:
    if isinstance(rng, RandomnessSource):
        return rng
    if rng is None:
        return RandomnessSource(0)
    return RandomnessSource(int(rng))
