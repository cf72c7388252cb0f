"""Per-class entropy-priority feature queues and the evolving text cache.

Each class owns a bounded queue of (feature, entropy) pairs. A full queue
admits a newcomer only if its entropy is strictly lower than the current
worst entry, which is then evicted. Queues are seeded with the class text
feature at the maximum possible entropy ln(K) so they are never empty and so
real samples displace the seed first.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .config import EngineConfig
from .core import normalize_rows
from .exceptions import ConfigMismatch, InternalInvariantViolation

INSERTED = "inserted"
REPLACED = "replaced"
DISCARDED = "discarded"


@dataclass(frozen=True)
class CacheEntry:
    """One cached feature with the entropy of the prediction that filed it.

    ``sample_id`` is None for the text-seed sentinel. ``true_label`` is kept
    for error-rate metrics only and never read by the algorithm.
    """

    feature: np.ndarray
    entropy: float
    sample_id: int | None = None
    true_label: int | None = None

    @property
    def is_sentinel(self) -> bool:
        return self.sample_id is None


@dataclass(frozen=True)
class InsertOutcome:
    kind: str  # INSERTED | REPLACED | DISCARDED
    evicted: CacheEntry | None = None


class PositiveCache:
    """K bounded max-priority queues keyed by prediction entropy.

    The heap key is (-entropy, seq): the worst entry is the highest-entropy
    one, oldest first among ties, so the ln(K) sentinel is always the first
    to go once lower-entropy samples arrive.

    Single-writer: one adaptation loop mutates the cache; concurrent readers
    are safe only between samples.
    """

    def __init__(self, config: EngineConfig):
        self.K = config.K
        self.d = config.d
        self.capacity = config.M
        self._heaps: list[list[tuple[float, int, CacheEntry]]] = [[] for _ in range(self.K)]
        self._seq = 0
        # incremental counters behind the cache error-rate metric
        self._labeled_entries = 0
        self._mislabeled_entries = 0

    @classmethod
    def seeded(cls, text_features: np.ndarray, config: EngineConfig) -> "PositiveCache":
        cache = cls(config)
        sentinel_entropy = math.log(config.K)
        for k in range(config.K):
            entry = CacheEntry(feature=text_features[k].copy(), entropy=sentinel_entropy)
            heapq.heappush(cache._heaps[k], (-entry.entropy, cache._next_seq(), entry))
        return cache

    def _next_seq(self) -> int:
        seq = self._seq
        self._seq += 1
        return seq

    def insert(self, class_index: int, entry: CacheEntry) -> InsertOutcome:
        """File ``entry`` into the queue of ``class_index``.

        Returns the outcome: inserted (queue had room), replaced (strictly
        lower entropy than the worst entry, which is evicted and returned),
        or discarded (full queue, entropy >= current worst; ties discard).
        """
        if not 0 <= class_index < self.K:
            raise IndexError(f"class index {class_index} out of range [0, {self.K})")
        if not math.isfinite(entry.entropy):
            raise InternalInvariantViolation("cache entry entropy must be finite")
        heap = self._heaps[class_index]
        if len(heap) < self.capacity:
            heapq.heappush(heap, (-entry.entropy, self._next_seq(), entry))
            self._count(class_index, entry, +1)
            return InsertOutcome(INSERTED)
        worst = heap[0][2]
        if entry.entropy < worst.entropy:
            heapq.heapreplace(heap, (-entry.entropy, self._next_seq(), entry))
            self._count(class_index, worst, -1)
            self._count(class_index, entry, +1)
            return InsertOutcome(REPLACED, evicted=worst)
        return InsertOutcome(DISCARDED)

    def _count(self, class_index: int, entry: CacheEntry, delta: int) -> None:
        if entry.is_sentinel or entry.true_label is None or entry.true_label < 0:
            return
        self._labeled_entries += delta
        if entry.true_label != class_index:
            self._mislabeled_entries += delta

    def worst(self, class_index: int) -> CacheEntry:
        """The entry that would be evicted next: max entropy, oldest on ties."""
        heap = self._heaps[class_index]
        if not heap:
            raise InternalInvariantViolation(f"queue {class_index} is empty")
        return heap[0][2]

    def entries(self, class_index: int) -> list[CacheEntry]:
        """Entries of one queue in internal (heap) order."""
        return [item[2] for item in self._heaps[class_index]]

    def size(self, class_index: int) -> int:
        return len(self._heaps[class_index])

    def total_entries(self) -> int:
        return sum(len(h) for h in self._heaps)

    def features_matrix(self, class_index: int) -> np.ndarray:
        heap = self._heaps[class_index]
        if not heap:
            raise InternalInvariantViolation(f"queue {class_index} is empty")
        return np.stack([item[2].feature for item in heap])

    def class_means(self) -> np.ndarray:
        """Row k = arithmetic mean of queue k's features (not normalized)."""
        means = np.empty((self.K, self.d))
        for k in range(self.K):
            means[k] = self.features_matrix(k).mean(axis=0)
        return means

    def error_rate(self) -> float:
        """Fraction of labeled sample entries sitting in the wrong queue."""
        if self._labeled_entries == 0:
            return 0.0
        return self._mislabeled_entries / self._labeled_entries

    # -- checkpoint support -------------------------------------------------

    def dump_state(self) -> tuple[int, list[list[tuple[float, int, CacheEntry]]]]:
        return self._seq, self._heaps

    def load_state(self, seq: int, heaps: list[list[tuple[float, int, CacheEntry]]]) -> None:
        self._seq = seq
        self._heaps = heaps
        self._labeled_entries = 0
        self._mislabeled_entries = 0
        for k, heap in enumerate(heaps):
            for _, _, entry in heap:
                self._count(k, entry, +1)


class TextCache:
    """The K unit-norm class text prototypes, blended toward calibrated rows."""

    def __init__(self, prototypes: np.ndarray):
        self.prototypes = np.array(prototypes, dtype=np.float64)

    def momentum_update(self, calibrated: np.ndarray, pred_entropy_norm: float,
                        config: EngineConfig) -> bool:
        """Blend prototypes toward ``calibrated`` when the confidence gate opens.

        The gate compares the normalized prediction entropy against
        ``tau_t``: below the threshold by default (high confidence), above it
        when ``text_update_on_low_entropy`` is flipped. Returns whether the
        update was applied. ``eta == 0`` is an exact no-op.
        """
        if config.text_update_on_low_entropy:
            triggered = pred_entropy_norm < config.tau_t
        else:
            triggered = pred_entropy_norm > config.tau_t
        if not triggered or config.eta == 0.0:
            return False
        blended = (1.0 - config.eta) * self.prototypes + config.eta * calibrated
        self.prototypes = normalize_rows(blended, "text cache")
        return True


def init_caches(text_features: np.ndarray, config: EngineConfig) -> tuple[PositiveCache, TextCache]:
    """Build the seeded positive cache and the text cache from text features.

    ``text_features`` must be (K, d) with unit rows; rows are re-normalized
    to absorb storage rounding.
    """
    arr = np.asarray(text_features, dtype=np.float64)
    if arr.shape != (config.K, config.d):
        raise ConfigMismatch(
            f"text features shape {arr.shape} does not match (K, d)=({config.K}, {config.d})"
        )
    norms = np.linalg.norm(arr, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        worst = int(np.argmax(np.abs(norms - 1.0)))
        raise ConfigMismatch(
            f"text feature row {worst} has norm {norms[worst]!r}, expected unit"
        )
    arr = normalize_rows(arr, "text features")
    return PositiveCache.seeded(arr, config), TextCache(arr)
