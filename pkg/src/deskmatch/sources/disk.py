"""Pair source backed by a dataset directory."""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

from deskmatch.dataset import INDEX_FILE, IndexEntry, load_pair, read_index
from deskmatch.errors import DatasetError
from deskmatch.scenes import ScenePair
from deskmatch.sources._base import IndexedPairSource

logger = logging.getLogger(__name__)


class DiskPairSource(IndexedPairSource):
    """Reads ``<root>/index.json`` eagerly and pair directories lazily."""

    def __init__(self, root: Path | str) -> None:
        self._root = Path(root)
        if not self._root.is_dir():
            raise DatasetError("dataset root does not exist", self._root)
        self._entries: list[IndexEntry] = read_index(self._root)
        self._known = {e.pair_id for e in self._entries}
        logger.debug("Indexed %d pairs in %s", len(self._entries), self._root)

    @property
    def root(self) -> Path:
        return self._root

    @property
    def entries(self) -> list[IndexEntry]:
        return list(self._entries)

    @property
    def description(self) -> str:
        return str(self._root)

    def pair_ids(self) -> list[str]:
        return [e.pair_id for e in self._entries]

    def get_pair(self, pair_id: str) -> ScenePair:
        if pair_id not in self._known:
            raise KeyError(pair_id)
        return load_pair(self._root, pair_id)

    def digest(self) -> str:
        """sha256 over the index and every pair file, in index order."""
        h = hashlib.sha256()
        h.update((self._root / INDEX_FILE).read_bytes())
        for pair_id in self.pair_ids():
            for path in sorted((self._root / pair_id).iterdir()):
                h.update(path.name.encode("utf-8"))
                h.update(path.read_bytes())
        return h.hexdigest()
