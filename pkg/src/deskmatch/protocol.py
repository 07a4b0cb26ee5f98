"""Pair source contract shared by training and evaluation.

A pair source exposes an ordered, finite collection of :class:`ScenePair`
objects addressed by ``pair_id``. Order is stable across calls so seeded
shuffles and per-pair reports are reproducible. Implementations:

- ``DiskPairSource``: a dataset root written by ``build_dataset``
  (``index.json`` plus one directory per pair).
- ``SyntheticPairSource``: the same generator evaluated in memory, yielding
  pairs identical to what ``build_dataset`` would write for the same seed.
"""

from __future__ import annotations

from abc import abstractmethod
from collections.abc import Iterator
from typing import Protocol, runtime_checkable

from deskmatch.scenes import ScenePair


@runtime_checkable
class PairSource(Protocol):
    """Protocol for reading benchmark pairs from any backing store."""

    @abstractmethod
    def pair_ids(self) -> list[str]: ...

    @abstractmethod
    def get_pair(self, pair_id: str) -> ScenePair:
        """Load one pair; raises ``KeyError`` for unknown ids."""
        ...

    @abstractmethod
    def __len__(self) -> int: ...

    @abstractmethod
    def __iter__(self) -> Iterator[ScenePair]: ...

    @property
    @abstractmethod
    def description(self) -> str: ...
