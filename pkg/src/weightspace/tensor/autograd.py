"""Define-by-run reverse-mode automatic differentiation over numpy arrays.

Every differentiable operation returns a new :class:`Tensor` holding a closure
that maps the upstream gradient to one gradient per input. The tape is rebuilt
on every forward pass; calling :func:`backward` on a scalar walks it once in
reverse topological order.

Broadcasting is deliberately narrow: two operands must either share a shape or
one shape must be a trailing suffix of the other (batch dimensions lead).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ConfigError, ContractError, ShapeError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported default dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    """Dense array with optional gradient tracking.

    ``grad`` is ``None`` until a backward pass reaches this tensor; later
    passes add into it until :meth:`zero_grad` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op = "leaf"

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

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

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _result(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
        out.op = op
    return out


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    return a, b


def _check_broadcast(kind: str, sa: tuple, sb: tuple) -> None:
    if sa == sb:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(short) == 0 or long_[len(long_) - len(short):] == short:
        return
    raise ShapeError(
        f"{kind}: shapes {sa} and {sb} do not compose; only identical shapes or "
        f"a trailing-suffix shape (leading batch dimensions) are broadcast"
    )


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    return g.reshape(shape)


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def fn(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), fn, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("div", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd

    def fn(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _result(out, (a, b), fn, "div")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    ad = a.data
    return _result(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g / (2 * out),), "sqrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.dtype), (a,),
                   lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _result(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),),
                   "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _result(out, (a,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),),
                   "log_softmax")


# -- reductions --------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out, dtype=a.dtype), (a,), fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([shape[ax] for ax in axes]))
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).astype(a.dtype),)

    return _result(np.asarray(out, dtype=a.dtype), (a,), fn, "mean")


# -- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result(ad @ bd, (a, b), fn, "matmul")


# -- shape manipulation ------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from exc
    orig = a.shape
    return _result(out, (a,), lambda g: (g.reshape(orig),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for rank {a.ndim}")
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def slice_(a: Tensor, index) -> Tensor:
    out = a.data[index]
    shape, dtype = a.shape, a.dtype

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out, dtype=dtype, copy=True), (a,), fn, "slice")


def take(a: Tensor, indices, axis: int = -1) -> Tensor:
    """Gather ``indices`` along ``axis``; the backward pass scatters-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    out = np.take(a.data, idx, axis=axis)
    shape, dtype = a.shape, a.dtype
    unique = np.unique(idx).size == idx.size

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        sl = [slice(None)] * len(shape)
        sl[axis] = idx
        if unique:
            full[tuple(sl)] = g
        else:
            gm = np.moveaxis(g, axis, 0)
            fm = np.moveaxis(full, axis, 0)
            np.add.at(fm, idx, gm)
        return (full,)

    return _result(out, (a,), fn, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    nd = tensors[0].ndim
    axis = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != axis):
            raise ShapeError(f"concat shapes {[x.shape for x in tensors]} differ off axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(out, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# -- neural-network primitives -----------------------------------------------

def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm affine params must have shape ({d},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def fn(g):
        gx_hat = g * gd
        gx = inv / d * (d * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx.astype(x.dtype), (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out.astype(x.dtype), (x, gamma, beta), fn, "layernorm")


def embedding(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding index out of range for table of {table.shape[0]} rows")
    shape, dtype = table.shape, table.dtype

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _result(table.data[idx], (table,), fn, "embedding")


def _conv_out(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x`` is (N, C, H, W), ``w`` is (O, C, k, k)."""
    if stride <= 0:
        raise ConfigError(f"conv2d stride must be positive, got {stride}")
    if padding < 0:
        raise ConfigError(f"conv2d padding must be non-negative, got {padding}")
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d input has {c} channels but kernel expects {ci}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d bias must have shape ({o},), got {b.shape}")
    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(wd, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {h}x{wd}")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # im2col: (n, ho, wo, c, kh, kw), then a single matrix product
    cols = np.empty((n, ho, wo, c, kh, kw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[..., i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride].transpose(0, 2, 3, 1)
    cols = cols.reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    # float64 accumulation: the f32 result is then a single rounding of the exact sum
    out = cols.astype(np.float64) @ wmat.T.astype(np.float64)
    if b is not None:
        out = out + b.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2), dtype=x.dtype)

    def fn(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (gmat.T @ cols).reshape(w.shape)
        dcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        grads = [gx, gw.astype(w.dtype)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, fn, "conv2d")


def maxpool2d(x: Tensor, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    """Max pooling with floor output size; ties route gradient to the first maximum."""
    stride = kernel if stride is None else stride
    if kernel <= 0 or stride <= 0:
        raise ConfigError(f"maxpool2d kernel and stride must be positive, got {kernel}, {stride}")
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    ho, wo = _conv_out(h, kernel, stride, 0), _conv_out(w, kernel, stride, 0)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"maxpool2d kernel {kernel} larger than input {h}x{w}")
    if stride == kernel:
        # non-overlapping windows: k*k strided passes, strict '>' keeps the first maximum
        xd = x.data
        out = arg = None
        for t in range(kernel * kernel):
            i, j = divmod(t, kernel)
            v = xd[:, :, i:i + kernel * ho:kernel, j:j + kernel * wo:kernel]
            if out is None:
                out, arg = v.copy(), np.zeros(v.shape, dtype=np.intp)
            else:
                better = v > out
                out = np.where(better, v, out)
                arg[better] = t

        def fn_fast(g):
            gx = np.zeros(x.shape, dtype=x.dtype)
            for t in range(kernel * kernel):
                i, j = divmod(t, kernel)
                gx[:, :, i:i + kernel * ho:kernel, j:j + kernel * wo:kernel] = np.where(arg == t, g, 0)
            return (gx,)

        return _result(np.ascontiguousarray(out, dtype=x.dtype), (x,), fn_fast, "maxpool2d")
    win = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(arg, kernel)
    rows = np.arange(ho)[:, None] * stride + di
    cols = np.arange(wo)[None, :] * stride + dj
    nn_, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
    lin = ((nn_[..., None, None] * c + cc[..., None, None]) * h + rows) * w + cols
    overlapping = stride < kernel

    def fn(g):
        gx = np.zeros(n * c * h * w, dtype=x.dtype)
        if overlapping:
            np.add.at(gx, lin.reshape(-1), g.reshape(-1))
        else:
            gx[lin.reshape(-1)] = g.reshape(-1)
        return (gx.reshape(x.shape),)

    return _result(np.ascontiguousarray(out), (x,), fn, "maxpool2d")


# -- graph traversal ---------------------------------------------------------

def _topo_order(root: Tensor) -> list:
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


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor upstream of ``loss`` that requires it.

    Gradients add into existing ``.grad`` buffers, so two calls without a
    ``zero_grad`` in between double every gradient.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not part of a recorded graph (nothing requires grad)")
    order = _topo_order(loss)
    grads = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=parent.dtype)


# -- dispatch ---------------------------------------------------------------

_OPS = {
    "add": lambda ins, at: add(*ins),
    "sub": lambda ins, at: sub(*ins),
    "mul": lambda ins, at: mul(*ins),
    "div": lambda ins, at: div(*ins),
    "matmul": lambda ins, at: matmul(*ins),
    "conv2d": lambda ins, at: conv2d(*ins, stride=at.get("stride", 1), padding=at.get("padding", 0)),
    "maxpool2d": lambda ins, at: maxpool2d(ins[0], kernel=at.get("kernel", 2), stride=at.get("stride")),
    "relu": lambda ins, at: relu(ins[0]),
    "softmax": lambda ins, at: softmax(ins[0], axis=at.get("axis", -1)),
    "log_softmax": lambda ins, at: log_softmax(ins[0], axis=at.get("axis", -1)),
    "log": lambda ins, at: log(ins[0]),
    "exp": lambda ins, at: exp(ins[0]),
    "sqrt": lambda ins, at: sqrt(ins[0]),
    "tanh": lambda ins, at: tanh(ins[0]),
    "reshape": lambda ins, at: reshape(ins[0], at["shape"]),
    "transpose": lambda ins, at: transpose(ins[0], at.get("axes")),
    "slice": lambda ins, at: slice_(ins[0], at["index"]),
    "take": lambda ins, at: take(ins[0], at["indices"], axis=at.get("axis", -1)),
    "concat": lambda ins, at: concat(ins, axis=at.get("axis", 0)),
    "mean": lambda ins, at: mean(ins[0], axis=at.get("axis"), keepdims=at.get("keepdims", False)),
    "sum": lambda ins, at: sum_(ins[0], axis=at.get("axis"), keepdims=at.get("keepdims", False)),
    "layernorm": lambda ins, at: layernorm(*ins, eps=at.get("eps", 1e-5)),
    "embedding": lambda ins, at: embedding(ins[0], at["indices"]),
}

OP_KINDS = tuple(sorted(_OPS))


def forward_op(kind: str, inputs: Sequence[Tensor], attrs: Optional[dict] = None) -> Tensor:
    """Apply the operation named ``kind`` (e.g. ``"conv2d"``) to ``inputs``."""
    try:
        impl = _OPS[kind]
    except KeyError:
        raise ConfigError(f"unknown op kind {kind!r}; expected one of {OP_KINDS}") from None
    return impl(list(inputs), dict(attrs or {}))
