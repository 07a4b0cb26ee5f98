"""Tensor type and the thread-local define-by-run computation tape."""

from __future__ import annotations

import contextlib
import threading
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from deskmatch.errors import ContractError

Array = NDArray[np.float64]
# Maps the output adjoint to one adjoint (or None) per recorded input.
Adjoint = Callable[[Array], Sequence[Array | None]]


class Tensor:
    """Dense float64 array with an optional gradient.

    Arithmetic operators dispatch to :mod:`deskmatch.autodiff.ops`; only
    scalar-with-tensor broadcasting is accepted.
    """

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data: ArrayLike, requires_grad: bool = False) -> None:
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the underlying array."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of elements."""
        return int(self.data.size)

    def item(self) -> float:
        """Return the value of a one-element tensor."""
        if self.data.size != 1:
            raise ContractError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> Array:
        """Return a copy of the data."""
        return self.data.copy()

    def zero_grad(self) -> None:
        """Drop the accumulated gradient."""
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; imported lazily to keep ops free to import Tensor.
    def __add__(self, other: Tensor | float) -> Tensor:
        from deskmatch.autodiff import ops

        return ops.add(self, other)

    def __radd__(self, other: float) -> Tensor:
        from deskmatch.autodiff import ops

        return ops.add(self, other)

    def __sub__(self, other: Tensor | float) -> Tensor:
        from deskmatch.autodiff import ops

        return ops.sub(self, other)

    def __rsub__(self, other: float) -> Tensor:
        from deskmatch.autodiff import ops

        return ops.add(ops.neg(self), other)

    def __mul__(self, other: Tensor | float) -> Tensor:
        from deskmatch.autodiff import ops

        return ops.mul(self, other)

    def __rmul__(self, other: float) -> Tensor:
        from deskmatch.autodiff import ops

        return ops.mul(self, other)

    def __truediv__(self, other: Tensor | float) -> Tensor:
        from deskmatch.autodiff import ops

        return ops.div(self, other)

    def __neg__(self) -> Tensor:
        from deskmatch.autodiff import ops

        return ops.neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        from deskmatch.autodiff import ops

        return ops.matmul(self, other)

    def __getitem__(self, key: Any) -> Tensor:
        from deskmatch.autodiff import ops

        return ops.index(self, key)

    def reshape(self, *shape: int) -> Tensor:
        """Recorded reshape, see :func:`ops.reshape`."""
        from deskmatch.autodiff import ops

        return ops.reshape(self, shape)

    def sum(self, axis: int | None = None) -> Tensor:
        """Recorded sum, see :func:`ops.sum`."""
        from deskmatch.autodiff import ops

        return ops.sum(self, axis)


@dataclass(slots=True)
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    adjoint: Adjoint


class ComputationTape:
    """Ordered record of executed operations, replayed in reverse for adjoints."""

    def __init__(self) -> None:
        self._records: list[_Record] = []

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], adjoint: Adjoint) -> None:
        """Append one operation."""
        self._records.append(_Record(output, inputs, adjoint))

    def clear(self) -> None:
        """Forget every recorded operation."""
        self._records.clear()

    def sweep(self, loss: Tensor) -> dict[int, tuple[Tensor, Array]]:
        """Propagate adjoints from ``loss`` backwards; return ``id -> (tensor, grad)``."""
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss does not depend on any tensor that requires grad")
        if not self._records:
            raise ContractError("computation tape is empty")

        grads: dict[int, tuple[Tensor, Array]] = {id(loss): (loss, np.ones_like(loss.data))}
        for rec in reversed(self._records):
            entry = grads.get(id(rec.output))
            if entry is None:
                continue
            input_grads = rec.adjoint(entry[1])
            for inp, g in zip(rec.inputs, input_grads, strict=True):
                if g is None or not inp.requires_grad:
                    continue
                prev = grads.get(id(inp))
                grads[id(inp)] = (inp, g if prev is None else prev[1] + g)
        self.clear()
        return grads


class _State(threading.local):
    def __init__(self) -> None:
        self.tape = ComputationTape()
        self.enabled = True


_state = _State()


def current_tape() -> ComputationTape:
    """Return this thread's active tape."""
    return _state.tape


def is_recording() -> bool:
    """Whether operations on this thread are being recorded."""
    return _state.enabled


def record(output: Tensor, inputs: tuple[Tensor, ...], adjoint: Adjoint) -> Tensor:
    """Attach ``output`` to the tape when any input requires grad."""
    if _state.enabled and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        _state.tape.record(output, inputs, adjoint)
    return output


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording inside the block (frozen models, evaluation)."""
    previous = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


@contextlib.contextmanager
def fresh_tape() -> Iterator[ComputationTape]:
    """Run the block against a new, empty tape."""
    previous = _state.tape
    _state.tape = ComputationTape()
    try:
        yield _state.tape
    finally:
        _state.tape = previous


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every recorded tensor reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` buffers; the tape is cleared.
    """
    for tensor, grad in _state.tape.sweep(loss).values():
        tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


def gradients(loss: Tensor, wrt: Sequence[Tensor]) -> list[Array]:
    """Return d loss / d t for each ``t`` in ``wrt`` without touching ``.grad``.

    Unreachable tensors receive zeros.
    """
    grads = _state.tape.sweep(loss)
    out: list[Array] = []
    for t in wrt:
        entry = grads.get(id(t))
        out.append(np.zeros_like(t.data) if entry is None else entry[1])
    return out
