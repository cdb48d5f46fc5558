"""Dense tensor with a reverse-mode tape.

Every op in :mod:`evject.autograd.ops` produces a :class:`Tensor` that records
its parents and a closure mapping the output gradient to parent gradients.
Shapes are validated when an op is applied, so a malformed graph fails at
construction rather than in the middle of a training step.
"""

from __future__ import annotations

import numpy as np

from evject.errors import ShapeError, StateError

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        self.op = "leaf"

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

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self.op}, dtype={self.dtype})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self, grad=None):
        """Accumulate gradients of this tensor into every upstream leaf.

        ``grad`` defaults to ones for a scalar output.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient requires a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} != output shape {self.data.shape}")

        order = topological_order(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from evject.autograd import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from evject.autograd import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from evject.autograd import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from evject.autograd import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from evject.autograd import ops

        return ops.div(self, other)

    def __neg__(self):
        from evject.autograd import ops

        return ops.mul(self, -1.0)


def _needs_grad(t):
    return t.requires_grad or t._backward is not None


def topological_order(root):
    """Nodes reachable from ``root`` that lead to a gradient-carrying leaf."""
    order = []
    seen = set()
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
        for p in node._parents:
            if id(p) not in seen and _needs_grad(p):
                stack.append((p, False))
    return order


def make_node(data, parents, backward, op):
    """Wrap an op result; the backward closure is dropped if nothing upstream needs it."""
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


class Graph:
    """A callable model whose last forward pass can be differentiated.

    ``fn`` maps the graph's parameter dict and inputs to an output tensor.
    """

    def __init__(self, fn, params):
        self.fn = fn
        self.params = params
        self._output = None

    def forward(self, *inputs):
        self._output = self.fn(self.params, *inputs)
        return self._output

    def backward(self, output_grad=None):
        if self._output is None:
            raise StateError("backward() called before forward()")
        for p in self.params.values():
            p.zero_grad()
        self._output.backward(output_grad)
        return {name: p.grad for name, p in self.params.items()}
