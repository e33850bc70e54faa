"""Dense float tensors with tape-based reverse-mode differentiation.

Tensors wrap a numpy array (float32 unless float64 is asked for explicitly)
and, when produced by a differentiable op from an input that requires a
gradient, a :class:`Node` recording how to push gradients back. Calling
:func:`backward` on a scalar collects those nodes into a :class:`Tape` in
reverse topological order and replays them once.

Every op checks its output for NaN/Inf and raises :class:`NumericError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels, rng
from .errors import GradientError, InvalidLabelError, NumericError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    consumed: bool = False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype == np.float64 else np.float32
        if np.dtype(dtype) not in FLOAT_DTYPES:
            raise TypeError(f"unsupported tensor dtype {dtype}")
        arr = np.array(data, dtype=dtype, copy=True)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("non-finite value in tensor data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __neg__ = lambda a: neg(a)
    __matmul__ = lambda a, b: matmul(a, b)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x), dtype=dtype)


def _check_finite(op, arr):
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced non-finite values")
    return arr


def _make(op, out, inputs, vjp):
    """Wrap an op result, recording a tape node when any input needs gradients."""
    _check_finite(op, out)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t._node = None
    t.requires_grad = any(i.requires_grad for i in inputs)
    if t.requires_grad:
        t._node = Node(op, tuple(inputs), vjp)
    return t


# ---------------------------------------------------------------- creation


def create(shape, init="zeros", *, value=0.0, mean=0.0, std=1.0, seed=0, dtype=np.float32):
    """Allocate a tensor.

    ``init`` is ``"zeros"``, ``"constant"`` (uses ``value``) or ``"normal"``
    (``mean``, ``std``, drawn from the Philox stream keyed by ``seed``).
    """
    shape = tuple(int(d) for d in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    if not shape or any(d < 1 for d in shape):
        raise ShapeError(f"invalid shape {shape}")
    if init == "zeros":
        arr = np.zeros(shape)
    elif init == "constant":
        arr = np.full(shape, float(value))
    elif init == "normal":
        if std < 0:
            raise ValueError("std must be >= 0")
        arr = rng.stream(seed, rng.INIT).standard_normal(shape) * std + mean
    else:
        raise ValueError(f"unknown init {init!r}")
    return Tensor(arr, dtype=dtype)


# ---------------------------------------------------------------- elementwise


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, d in enumerate(shape):
        if d == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(op, a, b, fwd, da, db):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    try:
        out = fwd(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{op}: {exc}") from None

    def vjp(g):
        return (_unbroadcast(da(g, a.data, b.data), a.shape) if a.requires_grad else None,
                _unbroadcast(db(g, a.data, b.data), b.shape) if b.requires_grad else None)

    return _make(op, out, (a, b), vjp)


def add(a, b):
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary("mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary("div", a, b, np.divide, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(a):
    a = _as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def relu(x):
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    x = _as_tensor(x)
    active = x.data > 0
    return _make("relu", np.where(active, x.data, 0).astype(x.dtype), (x,), lambda g: (g * active,))


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x):
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    return _make("transpose", np.ascontiguousarray(x.data.T), (x,), lambda g: (g.T,))


def tsum(x, axis=None):
    """Sum with float64 accumulation."""
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, dtype=np.float64).astype(x.dtype)
    shape = x.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.dtype),)

    return _make("sum", np.asarray(out), (x,), vjp)


def mean(x):
    x = _as_tensor(x)
    return div(tsum(x), float(x.size))


def pick(x, index):
    """Gather ``x[r, index[r]]`` along the last axis for every row ``r``."""
    x = _as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    if x.data.ndim == 1:
        rows = ()
        out = x.data[idx]
    else:
        rows = (np.arange(x.shape[0]),)
        out = x.data[rows + (idx,)]

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, rows + (idx,), g)
        return (full,)

    return _make("pick", np.asarray(out), (x,), vjp)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product of [m,k] and [k,n]; dot products accumulate in float64."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} x {b.shape}")
    out = kernels.matmul(a.data, b.data)

    def vjp(g):
        return (kernels.matmul(g, b.data.T) if a.requires_grad else None,
                kernels.matmul(a.data.T, g) if b.requires_grad else None)

    return _make("matmul", out, (a, b), vjp)


def conv2d(x, kernels_, stride=1, pad=0):
    """2-D cross-correlation with zero padding.

    ``x`` is [c_in, h, w] or batched [n, c_in, h, w]; ``kernels_`` is
    [c_out, c_in, kh, kw]. Output spatial size is
    ``floor((h + 2*pad - kh) / stride) + 1``.
    """
    x = _as_tensor(x)
    k = _as_tensor(kernels_, x)
    if stride < 1 or pad < 0:
        raise ShapeError("stride must be >= 1 and pad >= 0")
    batched = x.data.ndim == 4
    if x.data.ndim not in (3, 4) or k.data.ndim != 4:
        raise ShapeError(f"conv2d expects [c,h,w] or [n,c,h,w] input and 4-D kernels, got {x.shape}, {k.shape}")
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    co, ci, kh, kw = k.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernels expect {ci}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    out = kernels.conv2d_forward(xd, k.data, stride, pad)

    def vjp(g):
        gb = g if batched else g[None]
        gx = kernels.conv2d_backward_input(gb, k.data, xd.shape, stride, pad) if x.requires_grad else None
        if gx is not None and not batched:
            gx = gx[0]
        gk = kernels.conv2d_backward_weight(gb, xd, k.shape, stride, pad) if k.requires_grad else None
        return gx, gk

    return _make("conv2d", out if batched else out[0], (x, k), vjp)


# ---------------------------------------------------------------- losses


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, labels, reduction="mean"):
    """Cross-entropy of softmax(logits) against integer labels.

    Computed in float64 with max-subtraction. ``reduction="none"`` returns
    the per-sample vector instead of the batch mean.
    """
    logits = _as_tensor(logits)
    z = logits.data if logits.data.ndim == 2 else logits.data[None]
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    nb, c = z.shape
    if y.shape != (nb,):
        raise ShapeError(f"expected {nb} labels, got {y.shape}")
    if ((y < 0) | (y >= c)).any():
        raise InvalidLabelError(f"labels must lie in [0, {c})")
    logp = log_softmax(z)
    per = -logp[np.arange(nb), y]
    probs = np.exp(logp)
    probs[np.arange(nb), y] -= 1.0

    if reduction == "mean":
        out = np.asarray(per.mean(), dtype=logits.dtype)

        def vjp(g):
            gz = probs * (float(g) / nb)
            return (gz.reshape(logits.shape).astype(logits.dtype),)
    elif reduction == "none":
        out = per.astype(logits.dtype)
        if logits.data.ndim == 1:
            out = out.reshape(())

        def vjp(g):
            gz = probs * np.reshape(g, (nb, 1))
            return (gz.reshape(logits.shape).astype(logits.dtype),)
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    return _make("softmax_cross_entropy", out, (logits,), vjp)


# ---------------------------------------------------------------- differentiation


@dataclass
class Tape:
    """Recorded ops reachable from one output, in reverse topological order."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_output(cls, out):
        order, seen = [], set()
        stack = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            node = t._node
            if node is None:
                continue
            if expanded:
                order.append(t)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((t, True))
            for inp in node.inputs:
                if inp._node is not None and id(inp._node) not in seen:
                    stack.append((inp, False))
        order.reverse()
        return cls(order)


def backward(loss):
    """Populate ``.grad`` on every leaf that requires a gradient.

    Gradients accumulate into existing ``.grad`` arrays; a graph can be
    replayed only once.
    """
    if not isinstance(loss, Tensor):
        raise GradientError("backward expects a Tensor")
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise GradientError("loss was not produced by recorded operations (missing tape)")
    if loss._node.consumed:
        raise GradientError("backward already called on this graph")
    tape = Tape.from_output(loss)
    grads = {id(loss): np.ones(loss.shape, dtype=np.float64)}
    for t in tape.nodes:
        node = t._node
        g = grads.pop(id(t), None)
        node.consumed = True
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(np.asarray(g, dtype=t.dtype))):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                gi = np.asarray(gi, dtype=inp.dtype).reshape(inp.shape)
                _check_finite(f"gradient of {node.op}", gi)
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi


def finite_diff_gradient(f, x, h=1e-3):
    """Central-difference gradient of a tensor-to-scalar function at ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = _as_tensor(x)
    base = x.data
    grad = np.zeros(base.shape, dtype=np.float64)
    flat = grad.reshape(-1)
    for i in range(base.size):
        xp = base.copy().reshape(-1)
        xm = base.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = float(f(Tensor(xp.reshape(base.shape), dtype=base.dtype)).data)
        fm = float(f(Tensor(xm.reshape(base.shape), dtype=base.dtype)).data)
        flat[i] = (fp - fm) / (2 * h)
    return Tensor(grad, dtype=base.dtype)


# ---------------------------------------------------------------- projection


def project_array(x, center, eps, norm="linf", batched=False):
    """Nearest point in the ``eps``-ball around ``center``, then clipped to [0, 1].

    With ``batched=True`` the first axis indexes samples, norms are taken per
    sample, and ``eps`` may be a per-sample array.
    """
    x = np.asarray(x)
    center = np.asarray(center)
    if x.shape != center.shape:
        raise ShapeError(f"project: shape mismatch {x.shape} vs {center.shape}")
    eps = np.asarray(eps, dtype=np.float64)
    if (eps < 0).any():
        raise ValueError("eps must be >= 0")
    delta = x.astype(np.float64) - center
    if batched:
        eps_b = eps.reshape((-1,) + (1,) * (x.ndim - 1)) if eps.ndim else eps
    else:
        eps_b = eps
    if norm == "linf":
        delta = np.clip(delta, -eps_b, eps_b)
    elif norm == "l2":
        axes = tuple(range(1, x.ndim)) if batched else None
        nrm = np.sqrt((delta * delta).sum(axis=axes, keepdims=batched))
        scale = np.where(nrm > eps_b, eps_b / np.maximum(nrm, 1e-300), 1.0)
        delta = delta * scale
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return np.clip(center + delta, 0.0, 1.0).astype(x.dtype)


def project(x, center, eps, norm="linf"):
    x = _as_tensor(x)
    center = _as_tensor(center, x)
    return Tensor(project_array(x.data, center.data, eps, norm), dtype=x.dtype)
