"""Exception hierarchy shared by every deskmatch module."""

from __future__ import annotations

from pathlib import Path


class DeskmatchError(Exception):
    """Base class for domain errors; the CLI maps these to exit code 1."""


class DimensionError(DeskmatchError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(DeskmatchError, ValueError):
    """A scalar parameter is outside its admissible range."""


class DomainError(DeskmatchError, ValueError):
    """A pointwise function was evaluated outside its domain."""


class ContractError(DeskmatchError, ValueError):
    """A documented precondition of an operation does not hold."""


class InputError(DeskmatchError, ValueError):
    """Model input does not fit the configured architecture."""


class ConfigurationError(DeskmatchError, ValueError):
    """Configuration values are inconsistent with each other or with artifacts."""


class EstimationError(DeskmatchError, RuntimeError):
    """A robust estimator could not produce a model."""


class InsufficientDataError(EstimationError):
    """Too few correspondences for the minimal solver."""


class CheckpointFormatError(DeskmatchError, ValueError):
    """A checkpoint file is malformed."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DatasetError(DeskmatchError, OSError):
    """A dataset file is missing or corrupt."""

    def __init__(self, message: str, path: Path | str) -> None:
        super().__init__(f"{message}: {path}")
        self.path = Path(path)
