"""Seedable, splittable random streams.

Backed by numpy's Philox-4x64-10 counter-based bit generator. A stream is
identified by ``(seed, path)``; :meth:`Rng.split` appends to the path, and
the key is derived with ``SeedSequence(seed, spawn_key=path)``. The same
``(seed, path)`` yields the same bits on every platform.
"""
import numpy as np


class Rng:
    def __init__(self, seed=0, path=()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def split(self, index):
        """Independent child stream; does not advance this stream."""
        return Rng(self.seed, self.path + (index,))

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"

    # thin passthroughs; callers may also use ``.gen`` directly
    def normal(self, size=None, scale=1.0):
        return self.gen.normal(0.0, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, n, size=None, replace=True, p=None):
        return self.gen.choice(n, size=size, replace=replace, p=p)

    def trunc_normal(self, shape, std=0.02, bound=2.0):
        """Normal(0, std) resampled until every entry lies within bound*std."""
        out = self.gen.normal(0.0, 1.0, shape)
        bad = np.abs(out) > bound
        while bad.any():
            out[bad] = self.gen.normal(0.0, 1.0, int(bad.sum()))
            bad = np.abs(out) > bound
        return out * std
