"""Reverse-mode automatic differentiation over numpy arrays.

Small define-by-run engine: every op builds a Tensor that remembers its
parents and a closure computing parent gradients. Gradients are plain numpy
arrays of the same dtype as the data, accumulated by Tensor.backward().

Two extras the models rely on:

* stop_gradient / detach cuts the backward path exactly (the returned node
  has no parents), which is what makes the "exactly zero gradient"
  assertions in the coupled autoencoder meaningful.
* a record/replay tape (freeze_tape) that pins every detached value and
  every quantizer assignment to its base-point value. Finite-difference
  re-evaluations run under replay so they differentiate the same surrogate
  function the analytic backward pass differentiates; without it the
  straight-through estimator's bias would show up as a bogus FD mismatch.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = bool(
            requires_grad or any(p.requires_grad for p in parents)
        )
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients of this node into every reachable parent."""
        if grad is None:
            if self.data.ndim != 0:
                raise ConfigurationError("backward() without grad needs a scalar")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def _topo_order(root):
    """Reverse topological order, iterative so deep graphs don't recurse out."""
    order, visiting, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visiting:
            continue
        visiting.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visiting:
                stack.append((p, False))
    order.reverse()
    return order


# graph mode ---------------------------------------------------------------

_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph construction (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _make(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, parents=parents, backward=backward)
    return Tensor(data)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _coerce(a, b):
    """Wrap python scalars / arrays so both operands are Tensors."""
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    return a, b


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# detach freeze/replay tape --------------------------------------------------

_TAPE = None


class freeze_tape:
    """Record, then replay, every detached value and frozen index choice.

    First use with mode="record" runs the function once and captures all
    values routed through frozen_value(). Re-entering with mode="replay"
    substitutes the recorded values, so perturbed re-evaluations see the
    straight-through surrogate instead of re-quantizing.
    """

    def __init__(self, mode, values=None):
        if mode not in ("record", "replay"):
            raise ConfigurationError(f"unknown tape mode {mode!r}")
        self.mode = mode
        self.values = [] if values is None else values
        self._cursor = 0

    def __enter__(self):
        global _TAPE
        self._prev = _TAPE
        _TAPE = self
        self._cursor = 0
        return self

    def __exit__(self, *exc):
        global _TAPE
        _TAPE = self._prev
        return False

    def push(self, value):
        if self.mode == "record":
            self.values.append(value)
            return value
        if self._cursor >= len(self.values):
            raise ConfigurationError("replay tape exhausted; graphs differ")
        value = self.values[self._cursor]
        self._cursor += 1
        return value


def frozen_value(value):
    """Route a non-differentiable intermediate through the active tape."""
    if _TAPE is None:
        return value
    return _TAPE.push(value)


def replaying():
    return _TAPE is not None and _TAPE.mode == "replay"


def custom_op(data, parents, backward):
    """Build a graph node from a raw forward value and backward closure."""
    return _make(data, parents, backward)


def detach(t):
    """Forward the value, contribute zero gradient (stop-gradient)."""
    t = as_tensor(t)
    return Tensor(frozen_value(t.data))


stop_gradient = detach


# elementwise ----------------------------------------------------------------


def add(a, b):
    a, b = _coerce(a, b)
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                         _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a, b = _coerce(a, b)
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                         _unbroadcast(-g, b.data.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _coerce(a, b)
    out = a.data * b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                         _unbroadcast(g * a.data, b.data.shape)))


def div(a, b):
    a, b = _coerce(a, b)
    out = a.data / b.data
    def backward(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
    return _make(out, (a, b), backward)


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * (0.5 / out),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a):
    """x * sigmoid(x); smooth, so finite differences behave everywhere."""
    return mul(a, sigmoid(a))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    factor = np.where(a.data > 0, a.data.dtype.type(1.0), a.data.dtype.type(slope))
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


# reductions / shape ----------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)
        if not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            ax = tuple(i % a.data.ndim for i in ax)
            shape = [1 if i in ax else n for i, n in enumerate(a.data.shape)]
            g = g.reshape(shape)
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for i in ax:
            n *= a.data.shape[i]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),))


def getitem(a, key):
    a = as_tensor(a)
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _make(np.ascontiguousarray(out), (a,), backward)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), backward)


# linear algebra --------------------------------------------------------------


def matmul(a, b):
    a, b = _coerce(a, b)
    out = a.data @ b.data

    def backward(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        ga = _unbroadcast(g @ bt, a.data.shape)
        gb = _unbroadcast(at @ g, b.data.shape)
        return ga, gb

    return _make(out, (a, b), backward)


def embedding(table, idx):
    """Row gather table[idx]; backward scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    out = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (gt,)

    return _make(out, (table,), backward)


def log_softmax(a, axis=-1):
    """Numerically stable log-softmax; tolerates -inf masked entries."""
    a = as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    shifted = x - m
    with np.errstate(invalid="ignore"):
        ex = np.exp(shifted)
    z = ex.sum(axis=axis, keepdims=True)
    out = shifted - np.log(z)
    soft = ex / z

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), backward)


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis=axis))


# convolution stack -----------------------------------------------------------


def _im2col(xt, kh, kw, stride):
    """xt is channel-first (C, N, H, W); columns come out as (C*KH*KW, N*OH*OW)."""
    c, n, h, w = xt.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=xt.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride]
    return cols.reshape(c * kh * kw, n * oh * ow), oh, ow


def conv2d(x, w, stride=1, padding=0):
    """NCHW convolution; one GEMM over (C*KH*KW, N*OH*OW) columns."""
    x, w = as_tensor(x), as_tensor(w)
    n, c, _, _ = x.data.shape
    f, cw, kh, kw = w.data.shape
    if c != cw:
        raise ConfigurationError(f"conv2d channels mismatch: input {c}, weight {cw}")
    xt = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3))
    if padding:
        xt = np.pad(xt, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, oh, ow = _im2col(xt, kh, kw, stride)
    wflat = w.data.reshape(f, c * kh * kw)
    out = np.ascontiguousarray(
        (wflat @ cols).reshape(f, n, oh, ow).transpose(1, 0, 2, 3))

    def backward(g):
        gflat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, n * oh * ow)
        gw = (gflat @ cols.T).reshape(w.data.shape)
        dcols = (wflat.T @ gflat).reshape(c, kh, kw, n, oh, ow)
        gxt = np.zeros_like(xt)
        for i in range(kh):
            for j in range(kw):
                gxt[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += dcols[:, i, j]
        if padding:
            gxt = gxt[:, :, padding:-padding, padding:-padding]
        return np.ascontiguousarray(gxt.transpose(1, 0, 2, 3)), gw

    return _make(out, (x, w), backward)


def upsample2x(x):
    """Nearest-neighbor 2x spatial upsample (NCHW)."""
    x = as_tensor(x)
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        n, c, h, w = g.shape
        return (g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)

    return _make(out, (x,), backward)


def pixel_shuffle2x(x):
    """(B, 4C, H, W) -> (B, C, 2H, 2W); channel groups become 2x2 subpixels."""
    x = as_tensor(x)
    b, c4, h, w = x.data.shape
    if c4 % 4 != 0:
        raise ConfigurationError(f"pixel_shuffle2x needs channels % 4 == 0, got {c4}")
    c = c4 // 4
    t = reshape(x, (b, c, 2, 2, h, w))
    t = transpose(t, (0, 1, 4, 2, 5, 3))
    return reshape(t, (b, c, 2 * h, 2 * w))


def one_hot(idx, num_classes, dtype=np.float32):
    """Constant one-hot array (no gradient), class axis last."""
    idx = np.asarray(idx)
    out = np.zeros(idx.shape + (num_classes,), dtype=dtype)
    np.put_along_axis(out, idx[..., None], 1, axis=-1)
    return out
