"""Base class for pair sources addressed by an ordered id list."""

from __future__ import annotations

from abc import abstractmethod
from collections.abc import Iterator

from deskmatch.scenes import ScenePair


class IndexedPairSource:
    """Derives length and iteration from ``pair_ids()`` and ``get_pair()``.

    Subclasses implement ``pair_ids()``, ``get_pair()`` and ``description``.
    """

    @abstractmethod
    def pair_ids(self) -> list[str]: ...

    @abstractmethod
    def get_pair(self, pair_id: str) -> ScenePair: ...

    @property
    @abstractmethod
    def description(self) -> str: ...

    def __len__(self) -> int:
        return len(self.pair_ids())

    def __iter__(self) -> Iterator[ScenePair]:
        for pair_id in self.pair_ids():
            yield self.get_pair(pair_id)
