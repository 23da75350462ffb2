"""Seeded random streams.

Every random draw in the package goes through an ``RngState``. Sub-streams
are derived from the seed plus integer keys through ``numpy.random.SeedSequence``,
so a per-sample stream does not depend on how many draws other samples made.
"""
from typing import Tuple, Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, str):
        # stable across processes, unlike hash()
        return int.from_bytes(key.encode("utf-8")[:8].ljust(8, b"\0"), "little")
    return int(key)


class RngState:
    """A seed plus a stream position.

    ``position`` counts the draw calls made on this stream; two states with the
    same seed, keys and call sequence produce bit-identical values.
    """

    def __init__(self, seed: int, keys: Tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.keys = tuple(keys)
        self.position = 0
        self._generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, *self.keys]))
        )

    def derive(self, *keys: Key) -> "RngState":
        """Independent child stream, a pure function of (seed, keys)."""
        return RngState(self.seed, self.keys + tuple(_key_to_int(k) for k in keys))

    def _advance(self) -> np.random.Generator:
        self.position += 1
        return self._generator

    def uniform(self, low: float, high: float, size=None, dtype=np.float64) -> np.ndarray:
        return np.asarray(self._advance().uniform(low, high, size=size)).astype(dtype)

    def normal(self, size=None, dtype=np.float64) -> np.ndarray:
        return self._advance().standard_normal(size=size).astype(dtype)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._advance().integers(low, high, size=size)

    def rademacher(self, size) -> np.ndarray:
        """Entries +1 or -1 with equal probability."""
        bits = self._advance().integers(0, 2, size=size)
        return (2 * bits - 1).astype(np.float64)

    def permutation(self, n: int) -> np.ndarray:
        return self._advance().permutation(n)

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, keys={self.keys}, position={self.position})"
