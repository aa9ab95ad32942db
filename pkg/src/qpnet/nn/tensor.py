"""Reverse-mode differentiation over numpy arrays.

Every kernel in :mod:`qpnet.nn.ops` returns a :class:`Tensor` that remembers
its parents and a closure mapping the upstream gradient to one gradient per
parent. :func:`backward` walks that record in reverse topological order and
accumulates into the ``grad`` field of every reachable :class:`Parameter`.
"""

import contextlib

import numpy as np

from ..exceptions import GraphError

_RECORDING = True


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (inference and validation)."""
    global _RECORDING
    previous = _RECORDING
    _RECORDING = False
    try:
        yield
    finally:
        _RECORDING = previous


def is_recording():
    return _RECORDING


class Tensor:
    """An array plus the record needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def backward(self, grad=None):
        backward(self, grad)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"{type(self).__name__}(shape={self.shape}{label})"


class Parameter(Tensor):
    """A leaf tensor with a persistent gradient buffer."""

    __slots__ = ("grad", "trainable")

    def __init__(self, data, name=None, trainable=True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable, name=name)
        self.grad = np.zeros_like(self.data)
        self.trainable = trainable

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def set_trainable(self, flag):
        self.trainable = bool(flag)
        self.requires_grad = bool(flag)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data, parents, backward_fn):
    """Wrap an op output, recording parents only when a gradient can flow."""
    if _RECORDING and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_fn)
    return Tensor(data)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss, grad=None):
    """Populate ``grad`` of every parameter reachable from ``loss``.

    Args:
        loss (Tensor): output of a recorded computation (usually a scalar).
        grad (np.ndarray): upstream gradient; ones by default.
    """
    if loss.backward_fn is None:
        raise GraphError("backward() called on a tensor with no recorded forward computation")
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.data.dtype)
    grads = {id(loss): seed}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
