"""Benchmark pair sources."""

from deskmatch.sources.disk import DiskPairSource
from deskmatch.sources.synthetic import SyntheticPairSource

__all__ = ["DiskPairSource", "SyntheticPairSource"]
