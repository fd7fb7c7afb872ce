"""Tensor, Parameter and the gradient tape.

Ops in :mod:`wafernet.tensor.ops` record themselves on the innermost active
:class:`GradTape` (one stack per thread). Without an active tape they only
compute, which is what inference and benchmarking use.
"""
from __future__ import annotations

import hashlib
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NonFiniteError, TapeStateError

_FLOATS = (np.float32, np.float64)


class Tensor:
    """Dense float array plus gradient bookkeeping.

    ``data`` is a numpy array of float32 (default) or float64; float64 is used
    by gradient checks.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


class Parameter(Tensor):
    """A named trainable tensor. ``grad`` always has the value's shape.

    ``init`` may be a zero-argument callable producing the value; it is
    invoked on first access of ``data``, so building a large model and
    counting its parameters does not draw any weights.
    """

    __slots__ = ("trainable", "_data", "_init", "_shape", "_dtype", "_grad")

    def __init__(self, data=None, name: str = "", trainable: bool = True, dtype=None, *,
                 shape=None, init=None):
        self._init = None
        self._grad = None
        if init is not None:
            if shape is None:
                raise ValueError("lazy Parameter needs an explicit shape")
            self._init = init
            self._data = None
            self._shape = tuple(shape)
            self._dtype = np.dtype(dtype or np.float32)
            self.requires_grad = trainable
            self.name = name
        else:
            super().__init__(data, requires_grad=trainable, name=name, dtype=dtype)
        self.trainable = trainable

    @property
    def data(self):
        if self._data is None:
            arr = np.asarray(self._init(), dtype=self._dtype)
            if arr.shape != self._shape:
                raise ValueError(f"{self.name}: initializer returned {arr.shape}, expected {self._shape}")
            self._data, self._init = arr, None
        return self._data

    @data.setter
    def data(self, arr):
        arr = np.asarray(arr)
        self._data = arr
        self._init = None
        self._shape = arr.shape
        self._dtype = arr.dtype
        if self._grad is not None and self._grad.shape != arr.shape:
            self._grad = None

    @property
    def grad(self):
        if self._grad is None:
            self._grad = np.zeros(self._shape, dtype=self._dtype)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    @property
    def shape(self):
        return self._shape

    @property
    def dtype(self):
        return self._dtype

    @property
    def size(self):
        return int(np.prod(self._shape)) if self._shape else 1

    @property
    def ndim(self):
        return len(self._shape)

    @property
    def materialized(self) -> bool:
        return self._data is not None

    def zero_grad(self):
        self._grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


class _Node:
    __slots__ = ("inputs", "output", "backward_fn", "op")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_local = threading.local()


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Optional["GradTape"]:
    stack = _stack()
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of executed primitives.

    Use as a context manager around the forward pass, then call
    :func:`backward` (or :meth:`backward`) with the scalar loss.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor,
               backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.nodes.append(_Node(op, tuple(inputs), output, backward_fn))

    def op_names(self) -> list[str]:
        return [n.op for n in self.nodes]

    def backward(self, loss: Tensor, visit: Optional[Callable[[str], None]] = None):
        """Propagate d(loss) back through the recorded ops in reverse order.

        Gradients are accumulated into ``.grad`` of every leaf tensor with
        ``requires_grad`` (parameters and inputs). The tape is consumed.
        """
        if self._consumed:
            raise TapeStateError("tape already consumed by a previous backward()")
        if not self.nodes:
            raise TapeStateError("backward() called without a recorded forward pass")
        if loss.data.size != 1:
            raise TapeStateError(f"loss must be a scalar, got shape {loss.shape}")
        if not any(n.output is loss for n in self.nodes):
            raise TapeStateError("loss tensor was not produced on this tape")

        produced = {id(n.output) for n in self.nodes}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.output), None)
            if visit is not None:
                visit(node.op)
            if g_out is None:
                continue
            g_in = node.backward_fn(g_out)
            for t, g in zip(node.inputs, g_in):
                if g is None or not t.requires_grad:
                    continue
                if id(t) in produced:
                    prev = grads.get(id(t))
                    grads[id(t)] = g if prev is None else prev + g
                else:
                    t.grad = g.copy() if t.grad is None else t.grad + g
        self.nodes.clear()
        self._consumed = True


def backward(tape: GradTape, loss: Tensor):
    """Module-level alias of :meth:`GradTape.backward`."""
    tape.backward(loss)


class KinkProbe:
    """Collects the branch decisions of piecewise ops (relu masks, pool argmax).

    Two forward passes with equal signatures stayed inside the same smooth
    region, which is what a finite-difference comparison needs.
    """

    def __init__(self):
        self.parts: list[bytes] = []

    def __enter__(self):
        _probes().append(self)
        return self

    def __exit__(self, *exc):
        _probes().remove(self)
        return False

    def note(self, decisions: np.ndarray):
        self.parts.append(hashlib.blake2b(np.ascontiguousarray(decisions).tobytes(),
                                          digest_size=16).digest())

    def signature(self) -> tuple:
        return tuple(self.parts)


def _probes():
    if not hasattr(_local, "probes"):
        _local.probes = []
    return _local.probes


def note_branches(decisions: np.ndarray):
    probes = _probes()
    if probes:
        probes[-1].note(decisions)


def check_finite(op: str, arr: np.ndarray):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, validate it, and record it when a tape is active."""
    check_finite(op, data)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = active_tape()
    if tape is not None and needs:
        tape.record(op, inputs, out, backward_fn)
    return out
