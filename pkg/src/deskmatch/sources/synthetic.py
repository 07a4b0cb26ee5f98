"""In-memory pair source running the dataset generator directly."""

from __future__ import annotations

import logging

from deskmatch.config import SceneConfig
from deskmatch.dataset import generate_pairs
from deskmatch.scenes import ScenePair
from deskmatch.sources._base import IndexedPairSource

logger = logging.getLogger(__name__)


class SyntheticPairSource(IndexedPairSource):
    """Seeded pairs, identical to what ``build_dataset`` writes for the same arguments.

    Pairs are generated on first access and cached.
    """

    def __init__(self, n_pairs: int, seed: int = 0, config: SceneConfig | None = None) -> None:
        self._n_pairs = n_pairs
        self._seed = seed
        self._config = config or SceneConfig()
        self._pairs: dict[str, ScenePair] | None = None

    @property
    def config(self) -> SceneConfig:
        return self._config

    @property
    def description(self) -> str:
        return f"synthetic:{self._config.kind}:seed={self._seed}:n={self._n_pairs}"

    def _materialize(self) -> dict[str, ScenePair]:
        if self._pairs is None:
            pairs = generate_pairs(self._seed, self._n_pairs, self._config)
            self._pairs = {p.pair_id: p for p in pairs}
            logger.debug("Generated %d synthetic pairs", len(self._pairs))
        return self._pairs

    def pair_ids(self) -> list[str]:
        return list(self._materialize())

    def get_pair(self, pair_id: str) -> ScenePair:
        return self._materialize()[pair_id]

    def __len__(self) -> int:
        return self._n_pairs
