"""Dense tensors with a reverse-mode differentiation graph."""

from __future__ import annotations

import contextlib

import numpy as np

from attngen.errors import UsageError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_state = {"dtype": np.float32}


def set_precision(name: str) -> None:
    """Select the global float precision ("float32" or "float64")."""
    try:
        _state["dtype"] = _DTYPES[name]
    except KeyError:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}") from None


def get_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(name: str):
    previous = _state["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _state["dtype"] = previous


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation.

    Leaf tensors with ``requires_grad`` accumulate into ``grad`` on every
    ``backward`` call. Interior nodes only keep their gradient when
    ``retain_grad()`` was called on them.
    """

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or get_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._retain = False

    # construction of graph nodes
    @classmethod
    def _make(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._retain = False
        parents = tuple(p for p in parents if p.requires_grad)
        out.requires_grad = bool(parents)
        out._parents = parents
        out._backward = backward if parents else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def retain_grad(self):
        self._retain = True
        return self

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self):
        backward(self)

    # elementwise arithmetic
    def __add__(self, other):
        other = _as_tensor(other, self.data.dtype)
        a, b = self, other

        def grad_fn(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), _pairwise(a, b, grad_fn))

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_as_tensor(other, self.data.dtype))

    def __rsub__(self, other):
        return _as_tensor(other, self.data.dtype) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other, self.data.dtype)
        a, b = self, other

        def grad_fn(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._make(a.data * b.data, (a, b), _pairwise(a, b, grad_fn))

    __rmul__ = __mul__

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self
        out = a.data ** exponent
        return Tensor._make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))

    def sum(self, axis=None, keepdims=False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def grad_fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=True),)

        return Tensor._make(np.asarray(out), (a,), grad_fn)

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inverse = np.argsort(axes)
        out = np.ascontiguousarray(a.data.transpose(axes))
        return Tensor._make(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),))


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _pairwise(a, b, grad_fn):
    # keep parent order aligned with the tuple _make filters
    def backward_fn(g):
        ga, gb = grad_fn(g)
        grads = []
        if a.requires_grad:
            grads.append(ga)
        if b.requires_grad:
            grads.append(gb)
        return tuple(grads)

    return backward_fn


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Nodes are visited once each in reverse topological order; parent order
    is fixed at graph construction so accumulation order is deterministic.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise UsageError("backward() requires a scalar tensor")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    order = _topological_order(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf or node._retain:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype)
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


class Parameter(Tensor):
    """A named trainable tensor carrying its own Adam moments."""

    def __init__(self, name, data, decay=True):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.decay = decay
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"
