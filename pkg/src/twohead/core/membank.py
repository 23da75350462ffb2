"""FIFO ring of unit-norm clean features used as contrastive negatives."""
import logging
from typing import Optional

import numpy as np

from ..numerics import RngState, l2_normalize
from .exceptions import DimMismatchError

logger = logging.getLogger(__name__)


class MemoryBank:
    """Fixed-capacity queue; the oldest entry is overwritten first.

    Only the training loop writes. ``negatives()`` hands out a copy so that
    readers always see a consistent snapshot.
    """

    def __init__(self, vectors: np.ndarray, cursor: int = 0, fill: Optional[int] = None):
        if vectors.ndim != 2:
            raise DimMismatchError(f"bank vectors must be 2-D, got {vectors.shape}")
        capacity = vectors.shape[0]
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError("bank capacity must be a power of two")
        self._vectors = np.array(vectors, dtype=np.float32)
        self.cursor = int(cursor) % capacity
        self.fill = capacity if fill is None else min(int(fill), capacity)

    @property
    def capacity(self) -> int:
        return self._vectors.shape[0]

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    def push(self, features: np.ndarray) -> None:
        """Insert a batch in FIFO order, renormalizing every vector."""
        features = np.atleast_2d(np.asarray(features))
        if features.shape[1] != self.dim:
            raise DimMismatchError(f"bank holds {self.dim}-d features, got {features.shape[1]}-d")
        n = features.shape[0]
        if n == 0:
            return
        unit = l2_normalize(features.astype(np.float64), axis=-1)
        keep = min(n, self.capacity)
        slots = (self.cursor + np.arange(n - keep, n)) % self.capacity
        self._vectors[slots] = unit[n - keep:]
        self.cursor = (self.cursor + n) % self.capacity
        self.fill = min(self.capacity, self.fill + n)

    def negatives(self) -> np.ndarray:
        """Every entry, as a copy. The current positive is not removed."""
        return self._vectors.copy()

    def copy(self) -> "MemoryBank":
        return MemoryBank(self._vectors, self.cursor, self.fill)

    def __len__(self) -> int:
        return self.capacity

    def __repr__(self) -> str:
        return f"MemoryBank(capacity={self.capacity}, dim={self.dim}, cursor={self.cursor})"


def init_bank(capacity: int, d_feat: int, rng: RngState) -> MemoryBank:
    """Random unit vectors, uniform on the sphere; the bank starts full."""
    raw = rng.derive("bank").normal((capacity, d_feat))
    bank = MemoryBank(l2_normalize(raw, axis=-1), cursor=0, fill=capacity)
    logger.debug("initialized %r", bank)
    return bank


def push_batch(bank: MemoryBank, features: np.ndarray) -> MemoryBank:
    """Functional push: returns the updated bank, leaving ``bank`` untouched."""
    updated = bank.copy()
    updated.push(features)
    return updated


def duplicate_mask(negatives: np.ndarray, positives: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """(B, N) mask of bank rows that coincide with each row's positive."""
    cosine = np.atleast_2d(positives).astype(np.float64) @ negatives.astype(np.float64).T
    return cosine >= 1.0 - tol
