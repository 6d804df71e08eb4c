"""Tensor type and the gradient tape.

A :class:`Tensor` wraps a numpy array. Operations performed while a
:class:`Tape` is active (``with Tape() as tape: ...``) are recorded when at
least one input requires a gradient; ``tape.backward(loss)`` then replays the
record in reverse.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_state = threading.local()
_DEFAULT_DTYPE = np.float32


class NonFiniteError(FloatingPointError):
    """Raised when an op turns finite inputs into NaN/Inf."""


class TapeError(RuntimeError):
    pass


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the working precision (used by gradient checks)."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    # -- array-like surface -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __len__(self):
        return len(self.data)

    def __float__(self):
        return self.item()

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    # -- operators (implemented in ops) -------------------------------------
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __pow__(self, p):
        return _ops().power(self, p)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __getitem__(self, idx):
        return _ops().getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return _ops().sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops().mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)


def _ops():
    from . import ops

    return ops


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of executed ops.

    ``backward`` may run once per recording; call :meth:`reset` to reuse the
    tape for another forward pass.
    """

    nodes: list = field(default_factory=list)
    consumed: bool = False
    visit_order: list = field(default_factory=list)

    def __enter__(self):
        stack = _stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, node: Node) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by backward(); call reset() first")
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False
        self.visit_order = []

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> list:
        """Propagate d(loss) back through the record.

        Every leaf tensor with ``requires_grad`` reached by the tape gets its
        ``.grad`` set. Tensors listed in ``params`` that did not take part get a
        zero gradient. Returns the gradients of ``params`` in order.
        """
        if self.consumed:
            raise TapeError("tape already consumed by backward(); call reset() first")
        if loss.size != 1:
            raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = set()
        leaves: dict[int, Tensor] = {}
        for node in self.nodes:
            produced.add(id(node.output))
        for i in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[i]
            self.visit_order.append(i)
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = t
        if id(loss) not in produced and loss.requires_grad:
            leaves[id(loss)] = loss
        for key, t in leaves.items():
            g = grads.get(key)
            if g is not None:
                t.grad = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)

        out = []
        if params is not None:
            for p in params:
                if id(p) not in leaves:
                    p.grad = np.zeros_like(p.data)
                out.append(p.grad)
        return out


def _stack() -> list:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording (the active tape is hidden for the block)."""
    stack = _stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def make_result(op: str, data: np.ndarray, inputs: tuple, backward) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it if needed."""
    if data.dtype != _DEFAULT_DTYPE and data.dtype.kind == "f":
        dts = {t.data.dtype for t in inputs if isinstance(t, Tensor)}
        if data.dtype not in dts:
            data = data.astype(_DEFAULT_DTYPE)
    if data.dtype.kind == "f" and not np.isfinite(data).all():
        if all(np.isfinite(t.data).all() for t in inputs if isinstance(t, Tensor)):
            raise NonFiniteError(f"{op}: non-finite output from finite inputs")
    out = Tensor(data, dtype=data.dtype)
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(Node(op, inputs, out, backward))
    return out
