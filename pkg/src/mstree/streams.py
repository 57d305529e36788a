"""Reproducible random streams keyed by a master seed and an integer path.

A stream is ``Generator(Philox(SeedSequence(master, spawn_key=path)))``.
Philox is counter based and ``SeedSequence`` hashing is a documented, stable
numpy algorithm, so ``(master, path)`` pins the draws across runs, machines
and worker counts.  Parallel code gives every chunk its own path and never
shares a generator between chunks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# first path component per consumer, so unrelated commands never collide
TAG_SPACINGS = 1
TAG_CASCADE = 2
TAG_POOL = 3
TAG_TREE = 4
TAG_ENERGY = 5
TAG_CF = 6
TAG_TAILS = 7
TAG_MISC = 8


def derive_stream(master: int, path=()) -> np.random.Generator:
    """Return the generator for ``(master, path)``."""
    ss = np.random.SeedSequence(entropy=int(master) & (2**64 - 1),
                                spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SeedStream:
    """A master seed plus a path; ``child`` extends the path."""

    master: int
    path: tuple = ()

    def child(self, *path) -> "SeedStream":
        return SeedStream(self.master, self.path + tuple(int(p) for p in path))

    def generator(self) -> np.random.Generator:
        return derive_stream(self.master, self.path)


def as_stream(seed) -> SeedStream:
    if isinstance(seed, SeedStream):
        return seed
    return SeedStream(int(seed))
