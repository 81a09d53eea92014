"""Reverse-mode differentiation over a linear tape of primitive ops."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class Var:
    """An array plus its accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Var{label}(shape={self.data.shape}, dtype={self.data.dtype})"


@dataclass
class TapeEntry:
    op: str
    inputs: Sequence[Var]
    output: Var
    backward: Callable[[np.ndarray], Sequence]


class GradTape:
    """Ordered record of executed ops; :meth:`backward` replays it in reverse."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __len__(self):
        return len(self.entries)

    def record(self, op, inputs, output, backward):
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward))

    def backward(self, loss: Var, grad=None):
        if grad is None:
            if loss.data.size != 1:
                raise ValueError("backward on a non-scalar needs an explicit gradient")
            grad = np.ones_like(loss.data)
        loss.grad = grad
        visited = []
        for entry in reversed(self.entries):
            g_out = entry.output.grad
            if g_out is None:
                continue
            grads = entry.backward(g_out)
            for inp, g in zip(entry.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                inp.grad = g if inp.grad is None else inp.grad + g
            visited.append(entry.op)
        return visited

    def __enter__(self):
        _stack.append(self)
        return self

    def __exit__(self, *exc):
        _stack.remove(self)
        return False


_stack: list[GradTape] = []


def active_tape() -> GradTape | None:
    return _stack[-1] if _stack else None


@contextlib.contextmanager
def no_tape():
    """Suspend recording (used by finite differences and evaluation)."""
    saved = _stack[:]
    _stack.clear()
    try:
        yield
    finally:
        _stack[:] = saved


def record(op, inputs, output: Var, backward) -> Var:
    """Attach ``backward`` to the active tape when any input needs a gradient."""
    tape = active_tape()
    if tape is not None and any(v.requires_grad for v in inputs):
        output.requires_grad = True
        tape.record(op, inputs, output, backward)
    return output
