"""Named parameter store with seeded initialisation."""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping
from typing import Literal

import numpy as np

from deskmatch.autodiff import Tensor
from deskmatch.autodiff._tape import Array
from deskmatch.errors import ConfigurationError

Init = Literal["he", "xavier", "zeros", "ones"]


class Parameters(Mapping[str, Tensor]):
    """Ordered ``name -> Tensor`` mapping; names are dotted, the first segment is the group."""

    def __init__(self, rng: np.random.Generator | None = None) -> None:
        self._tensors: dict[str, Tensor] = {}
        self._rng = rng or np.random.default_rng(0)

    def add(self, name: str, shape: tuple[int, ...], init: Init = "zeros") -> Tensor:
        """Register a trainable tensor; ``he``/``xavier`` scale by the fan-in."""
        if name in self._tensors:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        fan_in = math.prod(shape[1:]) if len(shape) == 4 else shape[0]
        if init == "he":
            data = self._rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        elif init == "xavier":
            data = self._rng.normal(0.0, math.sqrt(1.0 / fan_in), size=shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensor = Tensor(data, requires_grad=True)
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(t.size for t in self._tensors.values())

    def count_by_group(self) -> dict[str, int]:
        """Parameter counts keyed by the first component of each name."""
        groups: dict[str, int] = {}
        for name, tensor in self._tensors.items():
            group = name.split(".", 1)[0]
            groups[group] = groups.get(group, 0) + tensor.size
        return groups

    def freeze(self) -> None:
        """Mark every tensor as constant so no tape records reach it."""
        for tensor in self._tensors.values():
            tensor.requires_grad = False
            tensor.grad = None

    def arrays(self) -> dict[str, Array]:
        """Copies of every array, keyed by name."""
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def load_arrays(self, arrays: Mapping[str, Array]) -> None:
        """Overwrite values in place; names and shapes must match exactly."""
        missing = set(self._tensors) ^ set(arrays)
        if missing:
            raise ConfigurationError(f"parameter names differ: {sorted(missing)[:5]}")
        for name, tensor in self._tensors.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ConfigurationError(
                    f"parameter {name!r} has shape {value.shape}, architecture expects "
                    f"{tensor.shape}"
                )
            tensor.data = value.copy()
