"""Counter-based random source keyed by (seed, substream, step).

Each step owns a fixed block of ``width`` uniforms, so draws at step ``n``
never depend on what happened at earlier steps. Forcing a decision at one
step leaves every later draw unchanged.
"""

from __future__ import annotations

import numpy as np

_BLOCK = 4  # doubles produced per Philox counter increment


def draws_per_step(k_max: int) -> int:
    """theta, eps, k and one slot per parent, rounded up to a counter block."""
    need = 3 + k_max
    return _BLOCK * -(-need // _BLOCK)


class RngStream:
    """Random-access uniform stream.

    ``seed`` must fit in 64 bits. ``substream`` selects an independent key
    for replicas that share a seed.
    """

    def __init__(self, seed: int, width: int, substream: int = 0):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if width <= 0 or width % _BLOCK:
            raise ValueError(f"width must be a positive multiple of {_BLOCK}")
        self.seed = int(seed)
        self.substream = int(substream)
        self.width = width
        self.counter = 1  # next step served by next()

    def _bitgen(self, step: int) -> np.random.Philox:
        bg = np.random.Philox(key=np.array([self.seed, self.substream], dtype=np.uint64))
        skip = (step - 1) * (self.width // _BLOCK)
        if skip:
            bg.advance(skip)
        return bg

    def block(self, start: int, count: int) -> np.ndarray:
        """Uniforms for steps ``start .. start+count-1`` as a (count, width) array."""
        if start < 1:
            raise ValueError("steps are numbered from 1")
        gen = np.random.Generator(self._bitgen(start))
        return gen.random((count, self.width))

    def step(self, n: int) -> np.ndarray:
        return self.block(n, 1)[0]

    def next(self) -> np.ndarray:
        row = self.step(self.counter)
        self.counter += 1
        return row

    def spawn(self, substream: int) -> "RngStream":
        return RngStream(self.seed, self.width, substream)
