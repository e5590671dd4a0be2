"""Dense tensors with reverse-mode automatic differentiation.

Each operation produces a new :class:`Tensor` that remembers its parents and
a backward rule mapping the output gradient to one gradient per parent.
:func:`backward` orders the recorded graph topologically (the tape) and
walks it once in reverse, summing contributions for nodes with several
consumers.

Storage defaults to float32; :func:`default_dtype` switches to float64 for
gradient checking.
"""
from contextlib import contextmanager

import numpy as np

from ..errors import (
    DegenerateMaskError,
    EmptyReductionError,
    NonFiniteError,
    NormalizationError,
    RankError,
    ShapeError,
)
from . import kernels

_state = {"dtype": np.dtype(np.float32), "grad": True, "check_finite": False, "debug": False}


def get_default_dtype():
    return _state["dtype"]


@contextmanager
def default_dtype(dtype):
    old = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextmanager
def no_grad():
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def is_grad_enabled():
    return _state["grad"]


def set_check_finite(flag):
    """Raise :class:`NonFiniteError` whenever an op produces NaN/Inf."""
    _state["check_finite"] = bool(flag)


def set_debug(flag):
    """Enable extra invariant assertions (attention row sums, etc.)."""
    _state["debug"] = bool(flag)


def debug_enabled():
    return _state["debug"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype.kind == "f" else _state["dtype"]
        arr = np.asarray(data, dtype=dtype)
        # ascontiguousarray would promote 0-d arrays to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = None

    # -- introspection -------------------------------------------------
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

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def __len__(self):
        return self.data.shape[0]

    # -- operator sugar --------------------------------------------------
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is None:
        dtype = arr.dtype if arr.dtype.kind == "f" else _state["dtype"]
    return Tensor(arr, dtype=dtype)


def from_op(data, parents, backward_fn, op="custom"):
    """Wrap a forward result as a graph node.

    ``backward_fn(g)`` must return one gradient (or None) per parent, each
    shaped like that parent.
    """
    out = Tensor(data)
    if _state["check_finite"] and not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    nlead = g.ndim - len(shape)
    if nlead > 0:
        g = g.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    # constants adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(a, Tensor):
        a, b = as_tensor(a), as_tensor(b)
    return a, b


# -- elementwise ----------------------------------------------------------
def add(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return from_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return from_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b):
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return from_op(ad * bd, (a, b), bw, "mul")


def div(a, b):
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None
        return ga, gb

    return from_op(ad / bd, (a, b), bw, "div")


def power(a, p):
    a = as_tensor(a)
    ad = a.data
    return from_op(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    ad = a.data
    return from_op(np.log(ad), (a,), lambda g: (g / ad,), "log")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a):
    a = as_tensor(a)
    keep = a.data > 0
    return from_op(a.data * keep, (a,), lambda g: (g * keep,), "relu")


def gelu(a):
    """Tanh-approximation GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    a = as_tensor(a)
    shape = a.shape
    x2 = a.data.reshape(-1, shape[-1] if a.ndim else 1)
    out = kernels.gelu_fwd(x2).reshape(shape)

    def bw(g):
        return (kernels.gelu_bwd(x2, np.ascontiguousarray(g).reshape(x2.shape)).reshape(shape),)

    return from_op(out, (a,), bw, "gelu")


# -- linear algebra -----------------------------------------------------------
def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return from_op(ad @ bd, (a, b), bw, "matmul")


# -- reductions ---------------------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return from_op(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    if n == 0:
        raise EmptyReductionError("mean over an empty axis")
    return tsum(a, axis, keepdims) * (1.0 / n)


def tmax(a, axis=None, keepdims=False):
    """Max along one axis; the gradient flows to the first maximal entry."""
    a = as_tensor(a)
    if axis is None:
        flat = reshape(a, (-1,))
        return tmax(flat, 0, keepdims=False)
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, idx_k, axis=axis)
    shape = a.shape

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        z = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(z, idx_k, gk, axis=axis)
        return (z,)

    return from_op(out if keepdims else np.squeeze(out, axis), (a,), bw, "max")


# -- shape manipulation -------------------------------------------------------
def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, i, j):
    a = as_tensor(a)
    return from_op(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(a, idx):
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic(idx)

    def bw(g):
        z = np.zeros(shape, dtype=g.dtype)
        if basic:
            z[idx] = g  # basic indexing never aliases an element twice
        else:
            np.add.at(z, idx, g)
        return (z,)

    return from_op(a.data[idx], (a,), bw, "getitem")


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    axis = axis % ts[0].ndim
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return from_op(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def stack(tensors, axis=0):
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in map(as_tensor, tensors)], axis)


def embedding(weight, ids):
    """Row lookup ``weight[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)
    wshape = weight.shape

    def bw(g):
        z = np.zeros(wshape, dtype=g.dtype)
        np.add.at(z, ids, g)
        return (z,)

    return from_op(weight.data[ids], (weight,), bw, "embedding")


# -- normalisation and softmax --------------------------------------------
def softmax(a, mask=None):
    """Softmax over the last axis.

    ``mask`` is a boolean array broadcastable to ``a``; False entries are
    excluded and come out exactly 0. A row with no kept entry raises
    :class:`DegenerateMaskError`.
    """
    a = as_tensor(a)
    shape = a.shape
    x2 = a.data.reshape(-1, shape[-1])
    m2 = None
    if mask is not None:
        m2 = np.ascontiguousarray(np.broadcast_to(mask, shape), dtype=np.uint8).reshape(x2.shape)
    y, ok = kernels.softmax_fwd(x2, m2)
    if not ok:
        raise DegenerateMaskError("softmax row has every entry masked")
    out = y.reshape(shape)

    def bw(g):
        return (kernels.softmax_bwd(y, np.ascontiguousarray(g).reshape(y.shape)).reshape(shape),)

    return from_op(out, (a,), bw, "softmax")


def softmax_rows(a, mask=None):
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {a.shape}")
    return softmax(a, mask)


def log_softmax(a):
    a = as_tensor(a)
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True, dtype=np.float64)).astype(x.dtype)
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return from_op(out, (a,), bw, "log_softmax")


def layer_norm(a, gain, bias, eps=1e-5):
    a = as_tensor(a)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine params must be ({d},), got {gain.shape}, {bias.shape}")
    shape = a.shape
    x2 = a.data.reshape(-1, d)
    y, xhat, rstd = kernels.layernorm_fwd(x2, gain.data, bias.data, eps)

    def bw(g):
        dx, dg, db = kernels.layernorm_bwd(np.ascontiguousarray(g).reshape(x2.shape), xhat, rstd, gain.data)
        return dx.reshape(shape), dg, db

    return from_op(y.reshape(shape), (a, gain, bias), bw, "layer_norm")


def l2_normalize(a, min_norm=1e-12):
    a = as_tensor(a)
    x = a.data
    norm = np.sqrt((x.astype(np.float64) ** 2).sum(axis=-1, keepdims=True))
    if np.any(norm <= min_norm):
        raise NormalizationError("cannot l2-normalize a (near-)zero vector")
    norm = norm.astype(x.dtype)
    y = x / norm

    def bw(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return from_op(y, (a,), bw, "l2_normalize")


def cross_entropy(logits, targets, ignore_index=None):
    """Mean negative log-likelihood of ``targets`` under row softmax."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (rows, classes) logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != logits.shape[0]:
        raise ShapeError(f"{t.shape[0]} targets for {logits.shape[0]} rows")
    valid = np.ones_like(t, dtype=bool) if ignore_index is None else t != ignore_index
    n = int(valid.sum())
    if n == 0:
        raise EmptyReductionError("every row of cross_entropy is ignored")
    c = logits.shape[1]
    if np.any((t[valid] < 0) | (t[valid] >= c)):
        raise ShapeError("target class index out of range")
    x = logits.data.astype(np.float64)
    m = x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x - m).sum(axis=1, keepdims=True)) + m
    rows = np.nonzero(valid)[0]
    nll = lse[rows, 0] - x[rows, t[rows]]
    out = np.asarray(nll.sum() / n, dtype=logits.dtype)

    def bw(g):
        p = np.exp(x - lse)
        p[rows, t[rows]] -= 1.0
        p[~valid] = 0.0
        return ((p * (float(g) / n)).astype(logits.dtype),)

    return from_op(out, (logits,), bw, "cross_entropy")


# -- autodiff driver ----------------------------------------------------------
def tape(root):
    """Topologically ordered list of graph nodes reachable from ``root``."""
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every leaf that requires grad.

    Gradients accumulate across calls until reset with ``zero_grad``.
    """
    if loss.data.size != 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if pg.dtype != p.dtype:
                pg = pg.astype(p.dtype)
            k = id(p)
            grads[k] = pg if k not in grads else grads[k] + pg
