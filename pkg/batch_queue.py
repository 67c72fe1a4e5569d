from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass
class BatchEntry:
    sample: int        # dataset index
    aug_seed: int      # seeds this draw's augmentation


class EpochQueue:
    """Shuffled sample order for one epoch at a time, drawn from a shared generator."""

    def __init__(self, sample_ids, rng: np.random.Generator):
        self._ids = np.asarray(sample_ids, dtype=np.int64)
        self._rng = rng
        self._queue: deque[BatchEntry] = deque()

    def refill(self) -> None:
        """Queue every sample once in a fresh random order."""
        order = self._ids[self._rng.permutation(self._ids.size)]
        seeds = self._rng.integers(0, 2**31 - 1, size=order.size)
        self._queue = deque(BatchEntry(int(i), int(s)) for i, s in zip(order, seeds))

    def pop_batch(self, size: int) -> list[BatchEntry]:
        """Up to `size` entries; the last batch of an epoch may be short."""
        return [self._queue.popleft() for _ in range(min(size, len(self._queue)))]

    def __len__(self) -> int:
        return len(self._queue)
