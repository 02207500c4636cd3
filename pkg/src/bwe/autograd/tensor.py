"""Tensors and the tape that records operations for reverse-mode differentiation."""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class AutogradError(RuntimeError):
    pass


class Tensor:
    """A numpy array with an optional gradient.

    Activations are ``(batch, channels, length)``; parameters may take any
    shape. ``grad`` is ``None`` until something writes to it.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        from .functional import add
        return add(self, other)

    def __mul__(self, other):
        from .functional import scale
        return scale(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from .functional import add, scale
        return add(self, scale(other, -1.0))


def _raise_not_scalar(t):
    raise AutogradError(f"item() needs a single-element tensor, got shape {t.shape}")


class _Node:
    __slots__ = ("output", "inputs", "backward_fn", "op")

    def __init__(self, output, inputs, backward_fn, op):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations.

    Operations executed inside ``with tape:`` whose inputs require a gradient
    are recorded; :meth:`backward` replays them in reverse. A tape can be
    replayed once; call :meth:`reset` to reuse it.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable, op: str):
        if self.consumed:
            raise AutogradError("tape already replayed; reset it before recording again")
        self.nodes.append(_Node(output, tuple(inputs), backward_fn, op))

    def reset(self):
        self.nodes.clear()
        self.consumed = False

    def backward(self, loss: Tensor):
        if self.consumed:
            raise AutogradError("backward called twice on the same tape without reset")
        if loss.data.size != 1:
            raise AutogradError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise AutogradError("loss was not produced through this tape")
        self.consumed = True
        grads = {id(loss): np.ones_like(loss.data)}
        holders = {id(loss): loss}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            node.output.grad = g
            for inp, gi in zip(node.inputs, node.backward_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi
                holders[key] = inp
        # whatever is left was never produced by a recorded op: a leaf
        for key, g in grads.items():
            leaf = holders[key]
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def record(output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Attach ``output`` to the active tape if any input needs a gradient."""
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        tape.record(output, inputs, backward_fn, op)
    return output


def backward(loss: Tensor, tape: Tape):
    """Populate ``.grad`` of every tensor reachable from ``loss`` through ``tape``."""
    tape.backward(loss)
