"""Named, splittable random streams.

Every stochastic consumer (parameter init, dropout, batch sampling, data
generation) draws from its own stream, derived from a master seed and a
path of names. Streams are backed by the counter-based Philox generator,
so results do not depend on creation order or worker layout.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RngTree:
    """A node in a tree of independent random streams."""

    __slots__ = ("seed", "path")

    def __init__(self, seed: int, path: str = ""):
        self.seed = int(seed)
        self.path = path

    def child(self, name: str) -> "RngTree":
        return RngTree(self.seed, f"{self.path}/{name}" if self.path else name)

    def key(self) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{self.path}".encode()).digest()
        return np.frombuffer(digest, dtype=np.uint64)[:2].copy()

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream, always starting at counter 0."""
        return np.random.Generator(np.random.Philox(key=self.key()))

    def draws(self, block: int = 1 << 14) -> "BufferedDraws":
        return BufferedDraws(self.generator(), block)

    def __repr__(self) -> str:
        return f"RngTree(seed={self.seed}, path={self.path!r})"


class BufferedDraws:
    """Cheap scalar draws, pulled from the generator in blocks.

    Used by the task generators, which need millions of single uniforms;
    calling Generator.random() per draw would dominate their runtime.
    """

    __slots__ = ("_gen", "_block", "_buf", "_pos")

    def __init__(self, gen: np.random.Generator, block: int = 1 << 14):
        self._gen = gen
        self._block = block
        self._buf = gen.random(block)
        self._pos = 0

    def u01(self) -> float:
        if self._pos >= self._block:
            self._buf = self._gen.random(self._block)
            self._pos = 0
        value = self._buf[self._pos]
        self._pos += 1
        return value

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return min(int(self.u01() * n), n - 1)
