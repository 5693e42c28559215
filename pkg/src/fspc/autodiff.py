"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Every differentiable operation in this package is built from the small set
of primitives below. Keeping the op set tiny makes the finite-difference
gradient harness in :mod:`fspc.training` a meaningful end-to-end check.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "parameter",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "sqrt",
    "leaky_relu",
    "clip_min",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "reshape",
    "transpose",
    "concat",
    "take_rows",
    "standardize",
    "stop_gradient",
    "softmax",
]


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation.

    ``_backward`` maps the output gradient to a list of parent gradients
    (aligned with ``_parents``). Leaves created with ``requires_grad=True``
    accumulate into ``.grad`` when ``backward()`` runs.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for p, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not p.requires_grad:
                        continue
                    if id(p) in grads:
                        grads[id(p)] = grads[id(p)] + pg
                    else:
                        grads[id(p)] = pg
            elif node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g

    # arithmetic sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data):
    """A learnable leaf tensor."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    # reduce a broadcasted gradient back to the parent's shape
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _op(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents),
                  _backward=backward if req else None)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data + b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data - b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data * b.data, (a, b),
               lambda g: (_unbroadcast(g * b.data, a.shape),
                          _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data / b.data, (a, b),
               lambda g: (_unbroadcast(g / b.data, a.shape),
                          _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a):
    a = as_tensor(a)
    return _op(-a.data, (a,), lambda g: (-g,))


def _swap(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b):
    """Batched matrix product; operands must be at least 2-D.

    The common stacked-by-2-D case runs as a single flattened GEMM instead
    of one small GEMM per stack element.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if b.ndim == 2:
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(*lead, b.shape[1])

        def backward(g):
            g2 = g.reshape(-1, b.shape[1])
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _op(out, (a, b), backward)
    return _op(np.matmul(a.data, b.data), (a, b),
               lambda g: (_unbroadcast(np.matmul(g, _swap(b.data)), a.shape),
                          _unbroadcast(np.matmul(_swap(a.data), g), b.shape)))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _op(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _op(out, (a,), lambda g: (g / (2.0 * out),))


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    return _op(np.maximum(a.data, slope * a.data), (a,),
               lambda g: (np.where(a.data > 0, g, slope * g),))


def clip_min(a, floor):
    """Elementwise max(a, floor); gradient flows where the clip is inactive."""
    a = as_tensor(a)
    keep = a.data >= floor
    return _op(np.where(keep, a.data, floor), (a,),
               lambda g: (np.where(keep, g, 0.0),))


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        # broadcast view is safe: gradient accumulation never mutates in place
        if axis is None:
            return (np.broadcast_to(g, a.shape),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape),)

    return _op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return div(reduce_sum(a, axis=axis, keepdims=keepdims), float(count))


def reduce_max(a, axis, keepdims=False):
    """Max over a single axis; ties route the gradient to the first argmax.

    The argmax is only computed on the backward pass, keeping inference
    forward passes on the cheap reduction.
    """
    a = as_tensor(a)
    out = a.data.max(axis=axis, keepdims=keepdims)

    def backward(g):
        idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
        if not keepdims:
            g = np.expand_dims(g, axis)
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, idx, g, axis=axis)
        return (grad,)

    return _op(out, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _op(np.concatenate([t.data for t in tensors], axis=axis),
               tensors, backward)


def take_rows(a, indices):
    """Fancy-index the leading axis: out[i...] = a[indices[i...]]."""
    a = as_tensor(a)
    idx = np.asarray(indices)

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, idx.reshape(-1), g.reshape((-1,) + a.shape[1:]))
        return (grad,)

    return _op(a.data[idx], (a,), backward)


def standardize(a, axes, eps=1e-5):
    """Zero-mean unit-variance over `axes`: returns (y, mean, var).

    Fused batch standardization with the closed-form backward
    dL/dx = (g - mean(g) - y * mean(g*y)) / sigma, pooling over `axes`.
    """
    a = as_tensor(a)
    mu = a.data.mean(axis=axes, keepdims=True)
    var = ((a.data - mu)**2).mean(axis=axes, keepdims=True)
    sigma = np.sqrt(var + eps)
    y = (a.data - mu) / sigma

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gym = (g * y).mean(axis=axes, keepdims=True)
        return ((g - gm - y * gym) / sigma,)

    return _op(y, (a,), backward), mu, var


def stop_gradient(a):
    a = as_tensor(a)
    return Tensor(a.data.copy())


def softmax(a, axis):
    """Numerically stabilized softmax; the max shift is analytically a no-op."""
    a = as_tensor(a)
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, reduce_sum(e, axis=axis, keepdims=True))
