"""Binary checkpoint format with a JSON configuration sidecar.

Layout (little-endian): magic ``STFM1``, u32 parameter count, then per
parameter a u16 name length, the UTF-8 name, u8 rank, u32 per dimension and
float32 values in row-major order. ``<path>.json`` holds the MatcherConfig.
"""

from __future__ import annotations

import logging
import math
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from deskmatch._io import atomic_write_bytes, atomic_write_text
from deskmatch.autodiff import Tensor
from deskmatch.autodiff._tape import Array
from deskmatch.config import MatcherConfig
from deskmatch.errors import CheckpointFormatError, ConfigurationError
from deskmatch.model.matcher import Matcher, init_matcher

logger = logging.getLogger(__name__)

MAGIC = b"STFM1"


def sidecar_path(path: Path) -> Path:
    """Path of the JSON configuration stored next to a checkpoint."""
    return path.with_name(path.name + ".json")


def encode_checkpoint(params: Mapping[str, Tensor]) -> bytes:
    """Serialize named float32 tensors in insertion order."""
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for name, tensor in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(tensor.data.astype("<f4").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointFormatError(f"truncated while reading {what}", self.offset)
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes) -> dict[str, Array]:
    """Parse a whole checkpoint; nothing is returned unless every record is valid."""
    reader = _Reader(data)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointFormatError("bad magic", 0)
    (count,) = reader.unpack("<I", "parameter count")
    arrays: dict[str, Array] = {}
    for _ in range(count):
        start = reader.offset
        (name_len,) = reader.unpack("<H", "name length")
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError("parameter name is not UTF-8", start + 2) from e
        if name in arrays:
            raise CheckpointFormatError(f"duplicate parameter name {name!r}", start)
        (rank,) = reader.unpack("<B", "rank")
        shape = reader.unpack(f"<{rank}I", "dimensions")
        size = math.prod(shape)
        values = np.frombuffer(reader.take(4 * size, f"values of {name!r}"), dtype="<f4")
        arrays[name] = values.reshape(shape).astype(np.float64)
    if reader.offset != len(data):
        raise CheckpointFormatError("trailing bytes after last parameter", reader.offset)
    return arrays


def save_checkpoint(params: Mapping[str, Tensor], config: MatcherConfig, path: Path) -> None:
    """Write weights to ``path`` and the configuration to its sidecar."""
    path = Path(path)
    atomic_write_bytes(path, encode_checkpoint(params))
    atomic_write_text(sidecar_path(path), config.model_dump_json(indent=2))
    logger.info("Saved checkpoint %s", path)


def load_checkpoint(path: Path, expected: MatcherConfig | None = None) -> Matcher:
    """Load weights and configuration.

    Raises:
        CheckpointFormatError: the binary file is malformed.
        ConfigurationError: the sidecar is invalid, disagrees with ``expected``,
            or the weights do not fit the architecture it describes.
    """
    path = Path(path)
    arrays = decode_checkpoint(path.read_bytes())
    try:
        config = MatcherConfig.model_validate_json(sidecar_path(path).read_bytes())
    except ValidationError as e:
        raise ConfigurationError(f"invalid checkpoint config {sidecar_path(path)}: {e}") from e
    if expected is not None:
        if expected.input_channels != config.input_channels:
            raise ConfigurationError(
                f"checkpoint {path} has {config.input_channels} input channels, "
                f"expected {expected.input_channels}"
            )
        if expected != config:
            diff = sorted(
                k for k, v in expected.model_dump().items() if config.model_dump()[k] != v
            )
            raise ConfigurationError(f"checkpoint {path} differs from expected config in {diff}")
    params = init_matcher(config)
    params.load_arrays(arrays)
    return Matcher(params, config)
