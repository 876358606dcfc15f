"""Dense float64 tensors with reverse-mode automatic differentiation.

Every numeric value in the library is a :class:`Tensor` wrapping a float64
numpy array.  Operations executed while a :class:`Tape` is active are recorded
on it; :func:`backward` replays the tape in reverse to accumulate adjoints.
Tensors are immutable once produced by an op; only the optimizer mutates
parameter data in place.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class Tensor:
    """Dense N-dimensional float64 array, the unit of all computation."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class TapeEntry:
    """One executed op: inputs, output and the adjoint rule to replay it."""

    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed operations, in execution (topological) order."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self.entries)

    def gradients(self, loss: Tensor, params: Sequence[Tensor]) -> dict[Tensor, Tensor]:
        return backward(self, loss, params)


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(
    name: str,
    inputs: Sequence,
    output: Tensor,
    backward_fn: Callable[[np.ndarray], tuple],
) -> Tensor:
    """Register an executed op on the active tape if any input needs gradients.

    ``backward_fn`` receives the adjoint of ``output`` and must return one
    adjoint (or None) per entry of ``inputs``.
    """
    tape = active_tape()
    if tape is not None and any(
        isinstance(t, Tensor) and t.requires_grad for t in inputs
    ):
        output.requires_grad = True
        tape.entries.append(TapeEntry(name, tuple(inputs), output, backward_fn))
    return output


def backward(
    tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None
) -> dict[Tensor, Tensor]:
    """Accumulate d(loss)/d(param) for every parameter by replaying the tape.

    Parameters never reached by the computation get a zero gradient of
    matching shape.  The loss must be scalar.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    # Reverse execution order is a valid reverse-topological order: every
    # consumer of a tensor was recorded after its producer, so by the time the
    # producing entry is visited its output adjoint is fully accumulated.
    for entry in reversed(tape.entries):
        out_grad = grads.get(id(entry.output))
        if out_grad is None:
            continue
        in_grads = entry.backward_fn(out_grad)
        for inp, g in zip(entry.inputs, in_grads):
            if g is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            acc = grads.get(id(inp))
            if acc is None:
                grads[id(inp)] = np.array(g, dtype=np.float64, copy=True)
            else:
                acc += g

    if params is None:
        params = [
            t
            for e in tape.entries
            for t in e.inputs
            if isinstance(t, Tensor) and t.requires_grad
        ]
    out: dict[Tensor, Tensor] = {}
    for p in params:
        g = grads.get(id(p))
        out[p] = Tensor(g) if g is not None else Tensor(np.zeros_like(p.data))
    return out


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def parameter(value, requires_grad: bool = True) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=requires_grad)


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name}: non-finite values in output")
