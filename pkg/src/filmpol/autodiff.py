"""A small reverse-mode autodiff engine over dense numpy tensors.

Tensors carry a value array, an optional gradient buffer and the closure
that pushes an incoming gradient to their parents. Only what the angle and
reconstruction networks need is provided: 3x3 and 1x1 same-padded
convolutions, a handful of elementwise maps, concatenation along channels
and reductions to a scalar loss.
"""
from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import DataError, ShapeError, StateError

_grad_enabled = True
_debug = False


@contextmanager
def no_grad():
    """Run ops without recording the graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_debug(flag):
    """Turn per-op finiteness checks on or off; returns the previous setting."""
    global _debug
    prev = _debug
    _debug = bool(flag)
    return prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if not self.requires_grad:
            raise StateError("backward() on a tensor with no recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise StateError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        _accumulate(self, np.asarray(grad, dtype=self.dtype))
        for t in order:
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)
                if _debug:
                    for p in t._parents:
                        if p.grad is not None and not np.all(np.isfinite(p.grad)):
                            raise DataError(f"non-finite gradient flowing out of {t!r}")

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _topo_order(root):
    """Nodes reachable from ``root`` in reverse topological order (root first)."""
    seen = set()
    post = []
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            post.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return post[::-1]


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, parents, backward):
    out = Tensor(data)
    if _debug and not np.all(np.isfinite(out.data)):
        raise DataError("non-finite value produced by forward op")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def neg(a):
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def square(a):
    def backward(g):
        _accumulate(a, 2 * a.data * g)

    return _make(a.data * a.data, (a,), backward)


def relu(a):
    mask = a.data > 0

    def backward(g):
        _accumulate(a, g * mask)

    return _make(np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,), backward)


def sigmoid(a):
    s = expit(a.data)

    def backward(g):
        _accumulate(a, g * s * (1 - s))

    return _make(s, (a,), backward)


def cos(a):
    def backward(g):
        _accumulate(a, -g * np.sin(a.data))

    return _make(np.cos(a.data), (a,), backward)


def sin(a):
    def backward(g):
        _accumulate(a, g * np.cos(a.data))

    return _make(np.sin(a.data), (a,), backward)


def abs_(a):
    def backward(g):
        _accumulate(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), backward)


def mean(a):
    n = a.data.size

    def backward(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _make(np.asarray(a.data.mean(), dtype=a.dtype), (a,), backward)


def sum_(a):
    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward)


def concat(tensors, axis=1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def conv2d(x, w, b=None):
    """Stride-1, same-padded 2-D convolution (cross-correlation).

    ``x`` is (N, C, H, W); ``w`` is (C_out, C, k, k) with k in {1, 3};
    ``b`` is (C_out,) or None.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    c_out, c_in, kh, kw = w.shape
    if c_in != c:
        raise ShapeError(f"conv2d weight expects {c_in} input channels, got {c}")
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d supports 1x1 and 3x3 kernels, got {kh}x{kw}")
    wm = w.data.reshape(c_out, c_in * kh * kw)

    if kh == 3:
        cols = kernels.im2col3x3(x.data)
        out = (cols @ wm.T).reshape(n, h, wd, c_out).transpose(0, 3, 1, 2)
    else:
        cols = None
        out = np.matmul(wm, x.data.reshape(n, c, h * wd)).reshape(n, c_out, h, wd)
    if b is not None:
        out = out + b.data.reshape(1, c_out, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=(0, 2, 3)))
        if kh == 3:
            g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * h * wd, c_out)
            if w.requires_grad:
                _accumulate(w, (g2.T @ cols).reshape(w.shape))
            if x.requires_grad:
                _accumulate(x, kernels.col2im3x3(g2 @ wm, x.shape))
        else:
            g3 = g.reshape(n, c_out, h * wd)
            if w.requires_grad:
                xr = x.data.reshape(n, c, h * wd)
                _accumulate(w, np.tensordot(g3, xr, axes=([0, 2], [0, 2])).reshape(w.shape))
            if x.requires_grad:
                _accumulate(x, np.matmul(wm.T, g3).reshape(x.shape))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


def l1_loss(pred, gt):
    """Mean absolute difference."""
    pred = _as_tensor(pred)
    gt = _as_tensor(gt, pred.dtype)
    if pred.shape != gt.shape:
        raise ShapeError(f"l1_loss shape mismatch: {pred.shape} vs {gt.shape}")
    return mean(abs_(pred - gt))
