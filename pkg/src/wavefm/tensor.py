"""Dense real tensor with reverse-mode automatic differentiation.

numpy arrays are the storage; every differentiable op records a backward
closure on the graph (micrograd style, but at array granularity so matmul,
softmax and friends run as single numpy kernels). Complex linear algebra
lives in :mod:`wavefm.linalg` and stays off this graph: learnable state is
real-valued only, with complex CSI encoded as two real channels.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for an op."""


def _as_array(data, dtype):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense real array plus optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite values rejected at graph boundary")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._prev = ()

    # -- graph plumbing ------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._prev = tuple(parents)
            out._backward = backward
        else:
            out._prev = ()
            out._backward = None
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self):
        """Reverse-mode sweep from a scalar loss; gradients accumulate."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("non-finite loss rejected at graph boundary")
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._prev = ()
        out._backward = None
        return out

    # -- conveniences ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_coerce(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _coerce(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_const(self, p)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _coerce(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def tensor(data, requires_grad=False, dtype=np.float32):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(a, b):
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def sub(a, b):
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def mul(a, b):
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def div(a, b):
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def pow_const(a, p):
    p = float(p)
    out_data = a.data**p

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0))

    return Tensor._from_op(out_data, (a,), backward)


def exp(a):
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return Tensor._from_op(out_data, (a,), backward)


def log(a):
    out_data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return Tensor._from_op(out_data, (a,), backward)


def sqrt(a):
    out_data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out_data)

    return Tensor._from_op(out_data, (a,), backward)


def tanh(a):
    out_data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_data * out_data))

    return Tensor._from_op(out_data, (a,), backward)


def sigmoid(a):
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._from_op(out_data, (a,), backward)


def relu(a):
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return Tensor._from_op(out_data, (a,), backward)


def gelu(a):
    """Exact erf-based GELU: 0.5 x (1 + erf(x/sqrt(2)))."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_data = (x * cdf).astype(x.dtype)

    def backward(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
            a._accumulate(g * (cdf + x * pdf))

    return Tensor._from_op(out_data, (a,), backward)


def softplus(a):
    # stable: log(1+e^x) = max(x,0) + log1p(e^{-|x|})
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / (1.0 + np.exp(-x)))

    return Tensor._from_op(out_data, (a,), backward)


def atan2(y, x):
    out_data = np.arctan2(y.data, x.data)

    def backward(g):
        denom = x.data * x.data + y.data * y.data
        if y.requires_grad:
            y._accumulate(_unbroadcast(g * x.data / denom, y.shape))
        if x.requires_grad:
            x._accumulate(_unbroadcast(-g * y.data / denom, x.shape))

    return Tensor._from_op(out_data, (y, x), backward)


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - inner))

    return Tensor._from_op(out_data, (a,), backward)


def sum_(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype))

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


def mean(a, axis=None, keepdims=False):
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def backward(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate((np.broadcast_to(g, a.shape) / count).astype(a.dtype))

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


def max_(a, axis, keepdims=False):
    """Max along one axis; gradient flows to the first maximal element."""
    out_data = a.data.max(axis=axis, keepdims=keepdims)
    idx = a.data.argmax(axis=axis)

    def backward(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axis)
            mask = np.zeros_like(a.data)
            np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
            a._accumulate(mask * g)

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


def reshape(a, shape):
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return Tensor._from_op(out_data, (a,), backward)


def transpose(a, axes=None):
    out_data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return Tensor._from_op(out_data, (a,), backward)


def concat(tensors, axis=0):
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor._from_op(out_data, tuple(tensors), backward)


def slice_(a, key):
    """Basic (non-repeating) slicing; backward scatters into zeros."""
    out_data = a.data[key]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] = g
            a._accumulate(full)

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


def gather(a, indices, axis=0):
    """Integer-array row selection along `axis` (repeats allowed)."""
    indices = np.asarray(indices, dtype=np.intp)
    out_data = np.take(a.data, indices, axis=axis)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            if axis == 0:
                np.add.at(full, indices, g)
            else:
                moved = np.moveaxis(full, axis, 0)
                np.add.at(moved, indices, np.moveaxis(g, axis, 0))
            a._accumulate(full)

    return Tensor._from_op(out_data, (a,), backward)


def conv3x3(x, w, b=None):
    """2-D conv, kernel 3x3, stride 1, zero pad 1.

    x: (C_in, H, W), w: (C_out, C_in, 3, 3), b: (C_out,) optional.
    """
    if x.data.ndim != 3 or w.data.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv3x3: bad shapes x={x.shape} w={w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv3x3: channel mismatch x={x.shape} w={w.shape}")
    cin, h, wd = x.shape
    cout = w.shape[0]
    xp = np.zeros((cin, h + 2, wd + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x.data
    out_data = np.zeros((cout, h, wd), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            patch = xp[:, dy : dy + h, dx : dx + wd]
            out_data += np.tensordot(w.data[:, :, dy, dx], patch, axes=([1], [0]))
    if b is not None:
        out_data += b.data[:, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            gp = np.zeros((cin, h + 2, wd + 2), dtype=x.dtype)
            for dy in range(3):
                for dx in range(3):
                    gp[:, dy : dy + h, dx : dx + wd] += np.tensordot(
                        w.data[:, :, dy, dx], g, axes=([0], [0])
                    )
            x._accumulate(gp[:, 1:-1, 1:-1])
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for dy in range(3):
                for dx in range(3):
                    patch = xp[:, dy : dy + h, dx : dx + wd]
                    gw[:, :, dy, dx] = np.tensordot(g, patch, axes=([1, 2], [1, 2]))
            w._accumulate(gw)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(1, 2)))

    return Tensor._from_op(out_data, parents, backward)


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------


def layer_norm(x, gain, bias, eps=1e-5):
    """Layer normalization over the last axis, built from primitives."""
    mu = mean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=-1, keepdims=True)
    xn = div(xc, sqrt(add(var, _coerce(eps, x.dtype))))
    return add(mul(xn, gain), bias)


def log_softmax(a, axis=-1):
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    shifted = sub(a, shift)
    return sub(shifted, log(sum_(exp(shifted), axis=axis, keepdims=True)))


def softmax_cross_entropy(logits, labels, weights=None):
    """Weighted CE from integer labels; weights indexed by class."""
    labels = np.asarray(labels, dtype=np.intp)
    logp = log_softmax(logits, axis=-1)
    rows = np.arange(len(labels))
    picked = slice_(logp, (rows, labels))
    if weights is None:
        return -mean(picked)
    w = np.asarray(weights, dtype=logits.dtype)[labels]
    wt = Tensor(w / w.sum())
    return -sum_(mul(picked, wt))


def wrap_phase(delta):
    """Wrap phase differences to (-pi, pi]; piecewise-constant shift."""
    shift = Tensor(
        2.0 * np.pi * np.ceil((delta.data - np.pi) / (2.0 * np.pi)),
        dtype=delta.dtype,
    )
    return sub(delta, shift)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def finite_difference_check(inputs, func, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `inputs` are float64 leaf tensors with requires_grad set; `func` maps them
    to a single Tensor output, which is reduced to a scalar with fixed random
    weights so every output element participates.
    """
    for t in inputs:
        t.zero_grad()
    out = func(*inputs)
    rng = np.random.default_rng(1234)
    w = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
    loss = sum_(mul(out, w))
    loss.backward()
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float((func(*inputs).data * w.data).sum())
            flat[i] = orig - step
            dn = float((func(*inputs).data * w.data).sum())
            flat[i] = orig
            numeric = (up - dn) / (2.0 * step)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def _rand_away_from(rng, locus, margin, *shape):
    x = rng.standard_normal(shape)
    for _ in range(64):
        bad = np.abs(x - locus) < margin
        if not bad.any():
            break
        x[bad] = rng.standard_normal(int(bad.sum()))
    return Tensor(x, requires_grad=True, dtype=np.float64)


def _build_grad_check_case(op_kind, rng):
    if op_kind == "matmul":
        return [_rand(rng, 3, 4), _rand(rng, 4, 5)], matmul
    if op_kind == "matmul_batched":
        return [_rand(rng, 2, 3, 4), _rand(rng, 2, 4, 3)], matmul
    if op_kind == "add":
        return [_rand(rng, 3, 4), _rand(rng, 4)], add
    if op_kind == "sub":
        return [_rand(rng, 3, 4), _rand(rng, 3, 4)], sub
    if op_kind == "mul":
        return [_rand(rng, 3, 4), _rand(rng, 3, 1)], mul
    if op_kind == "div":
        a = _rand(rng, 3, 4)
        b = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True, dtype=np.float64)
        return [a, b], div
    if op_kind == "pow":
        x = Tensor(rng.uniform(0.3, 2.0, (3, 4)), requires_grad=True, dtype=np.float64)
        return [x], lambda t: pow_const(t, 1.7)
    if op_kind == "exp":
        return [_rand(rng, 3, 4)], exp
    if op_kind == "log":
        x = Tensor(rng.uniform(0.2, 3.0, (3, 4)), requires_grad=True, dtype=np.float64)
        return [x], log
    if op_kind == "sqrt":
        x = Tensor(rng.uniform(0.2, 3.0, (3, 4)), requires_grad=True, dtype=np.float64)
        return [x], sqrt
    if op_kind == "tanh":
        return [_rand(rng, 3, 4)], tanh
    if op_kind == "sigmoid":
        return [_rand(rng, 3, 4)], sigmoid
    if op_kind == "relu":
        return [_rand_away_from(rng, 0.0, 1e-3, 3, 4)], relu
    if op_kind == "gelu":
        return [_rand(rng, 3, 4)], gelu
    if op_kind == "softplus":
        return [_rand(rng, 3, 4)], softplus
    if op_kind == "atan2":
        y = _rand_away_from(rng, 0.0, 1e-2, 3, 4)
        x = _rand_away_from(rng, 0.0, 1e-2, 3, 4)
        return [y, x], atan2
    if op_kind == "softmax":
        return [_rand(rng, 3, 5)], lambda t: softmax(t, axis=-1)
    if op_kind == "layer_norm":
        return [_rand(rng, 3, 6), _rand(rng, 6), _rand(rng, 6)], layer_norm
    if op_kind == "sum":
        return [_rand(rng, 3, 4)], lambda t: sum_(t, axis=1)
    if op_kind == "mean":
        return [_rand(rng, 3, 4)], lambda t: mean(t, axis=0)
    if op_kind == "max":
        return [_rand(rng, 3, 4)], lambda t: max_(t, axis=1)
    if op_kind == "reshape":
        return [_rand(rng, 3, 4)], lambda t: reshape(t, (2, 6))
    if op_kind == "transpose":
        return [_rand(rng, 2, 3, 4)], lambda t: transpose(t, (2, 0, 1))
    if op_kind == "concat":
        return [_rand(rng, 2, 3), _rand(rng, 4, 3)], lambda a, b: concat([a, b], axis=0)
    if op_kind == "slice":
        return [_rand(rng, 4, 5)], lambda t: slice_(t, (slice(1, 3), slice(0, 4)))
    if op_kind == "gather":
        idx = np.array([0, 2, 2, 1])
        return [_rand(rng, 3, 4)], lambda t: gather(t, idx, axis=0)
    if op_kind == "conv3x3":
        return [_rand(rng, 2, 4, 4), _rand(rng, 3, 2, 3, 3), _rand(rng, 3)], conv3x3
    if op_kind == "softmax_xent":
        labels = rng.integers(0, 5, size=6)
        return [_rand(rng, 6, 5)], lambda t: softmax_cross_entropy(t, labels)
    raise KeyError(f"unknown op kind for grad check: {op_kind}")


GRAD_CHECK_OPS = (
    "matmul",
    "matmul_batched",
    "add",
    "sub",
    "mul",
    "div",
    "pow",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "sigmoid",
    "relu",
    "gelu",
    "softplus",
    "atan2",
    "softmax",
    "layer_norm",
    "sum",
    "mean",
    "max",
    "reshape",
    "transpose",
    "concat",
    "slice",
    "gather",
    "conv3x3",
    "softmax_xent",
)

# ops with kinks where a resample may be needed
_NONSMOOTH = {"relu", "max", "atan2"}

# name -> callable dispatch for the op set; attrs pass through as keywords
OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "pow": pow_const,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "gelu": gelu,
    "softplus": softplus,
    "atan2": atan2,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "sum": sum_,
    "mean": mean,
    "max": max_,
    "reshape": reshape,
    "transpose": transpose,
    "concat": concat,
    "slice": slice_,
    "gather": gather,
    "conv3x3": conv3x3,
}


def apply(op_kind, *inputs, **attrs):
    """Dispatch an op by name; the result lands on the graph whenever any
    input requires gradients."""
    try:
        func = OPS[op_kind]
    except KeyError:
        raise KeyError(f"unknown op kind {op_kind!r}") from None
    return func(*inputs, **attrs)


def grad_check(op_kind, seed, step=1e-5, retries=4):
    """Finite-difference check for a registered op kind; returns max rel error."""
    rng = np.random.default_rng(seed)
    attempts = retries if op_kind in _NONSMOOTH else 1
    best = np.inf
    for _ in range(max(attempts, 1)):
        inputs, func = _build_grad_check_case(op_kind, rng)
        err = finite_difference_check(inputs, func, step=step)
        best = min(best, err)
        if best < 1e-5:
            break
    return best
