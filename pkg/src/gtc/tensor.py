"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable computation in the package is expressed through
:func:`apply_primitive`.  Each primitive returns its forward value together
with a vector-Jacobian closure; when any input participates in gradients the
closure is stored on a :class:`TapeEntry` attached to the output tensor.
:func:`backward` rebuilds the tape from the root in topological order and
sweeps it in reverse, accumulating gradients additively into leaves.

:func:`detach` is the stop-gradient barrier: it returns a leaf that shares the
forward value but has no link to the producer graph.
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, NumericError

_node_ids = itertools.count(1)
_grad_mode = threading.local()

PRIMITIVES: dict[str, Callable] = {}


def is_grad_enabled() -> bool:
    return getattr(_grad_mode, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording on the current thread."""
    prev = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = prev


class TapeEntry:
    __slots__ = ("kind", "inputs", "output_id", "vjp")

    def __init__(self, kind, inputs, output_id, vjp):
        self.kind = kind
        self.inputs = inputs
        self.output_id = output_id
        self.vjp = vjp

    def __repr__(self):
        ins = ", ".join(str(t.node_id) for t in self.inputs)
        return f"TapeEntry({self.kind}: [{ins}] -> {self.output_id})"


class Tensor:
    """A dense row-major float64 array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_entry", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("tensor data contains NaN or Inf")
        self._init(arr, requires_grad)

    def _init(self, arr, requires_grad):
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = next(_node_ids)
        self._entry = None

    @classmethod
    def _wrap(cls, arr, requires_grad=False):
        t = cls.__new__(cls)
        Tensor._init(t, arr, requires_grad)
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._entry is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    @property
    def T(self):
        return transpose2d(self)


class Parameter(Tensor):
    """A named trainable leaf with a persistent gradient accumulator."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(x: Tensor) -> Tensor:
    """Stop-gradient barrier: same values, no link to ``x``'s producers."""
    return Tensor._wrap(x.data, requires_grad=False)


def register_primitive(kind: str):
    """Register ``fn(*arrays, **attrs) -> (output, vjp)`` under ``kind``."""

    def deco(fn):
        PRIMITIVES[kind] = fn
        return fn

    return deco


def apply_primitive(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive {kind!r}") from None
    inputs = tuple(as_tensor(t) for t in inputs)
    with np.errstate(all="ignore"):
        out, vjp = fn(*(t.data for t in inputs), **attrs)
    out = np.asarray(out, dtype=np.float64)
    if not np.isfinite(out).all():
        raise NumericError(f"{kind}: non-finite value in forward output")
    result = Tensor._wrap(out)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result._entry = TapeEntry(kind, inputs, result.node_id, vjp)
    return result


class Tape:
    """Primitive applications reachable from a root, in topological order."""

    def __init__(self, entries, leaves):
        self.entries = entries
        self.leaves = leaves

    def __len__(self):
        return len(self.entries)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        entries, leaves = [], []
        visited = set()
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                entries.append(t._entry)
                continue
            if t.node_id in visited or not t.requires_grad:
                continue
            visited.add(t.node_id)
            if t._entry is None:
                leaves.append(t)
                continue
            stack.append((t, True))
            for inp in reversed(t._entry.inputs):
                if inp.requires_grad and inp.node_id not in visited:
                    stack.append((inp, False))
        return cls(entries, leaves)


def backward(root: Tensor, tape: Tape | None = None) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar ``root``.

    Returns a map node_id -> gradient for every node on the tape, and adds each
    leaf's gradient into its ``grad`` accumulator.
    """
    if root.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    if tape is None:
        tape = Tape.record(root)
    grads = {root.node_id: np.ones_like(root.data)}
    for entry in reversed(tape.entries):
        g = grads.get(entry.output_id)
        if g is None:
            continue
        with np.errstate(all="ignore"):
            in_grads = entry.vjp(g)
        for inp, gi in zip(entry.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if not np.isfinite(gi).all():
                raise NumericError(f"{entry.kind}: non-finite gradient")
            prev = grads.get(inp.node_id)
            grads[inp.node_id] = gi if prev is None else prev + gi
    for leaf in tape.leaves:
        g = grads.get(leaf.node_id)
        if g is None:
            continue
        if leaf.grad is None:
            leaf.grad = np.array(g, dtype=np.float64)
        else:
            leaf.grad += g
    return grads


def _fail(kind, *shapes, why=""):
    desc = " and ".join(str(tuple(s)) for s in shapes)
    raise DimensionError(f"{kind}: incompatible shapes {desc}" + (f" ({why})" if why else ""))


def _suffix_pair(kind, a, b):
    """Validate the elementwise shape rule: equal shapes, or one a suffix of the other."""
    if a.shape == b.shape:
        return a.shape
    if a.ndim >= b.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return a.shape
    if b.ndim > a.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return b.shape
    _fail(kind, a.shape, b.shape, why="one shape must be a suffix of the other")


def _reduce_to(g, shape):
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra))) if extra else g


@register_primitive("add")
def _add(a, b):
    _suffix_pair("add", a, b)
    return a + b, lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape))


@register_primitive("sub")
def _sub(a, b):
    _suffix_pair("sub", a, b)
    return a - b, lambda g: (_reduce_to(g, a.shape), -_reduce_to(g, b.shape))


@register_primitive("elementwise_mul")
def _mul(a, b):
    _suffix_pair("elementwise_mul", a, b)
    return a * b, lambda g: (_reduce_to(g * b, a.shape), _reduce_to(g * a, b.shape))


@register_primitive("scalar_mul")
def _scalar_mul(a, c):
    c = float(c)
    return a * c, lambda g: (g * c,)


@register_primitive("matmul")
def _matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        _fail("matmul", a.shape, b.shape, why="operands must be at least 2-D")
    if b.ndim == 2:
        if a.shape[-1] != b.shape[0]:
            _fail("matmul", a.shape, b.shape)
    elif a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        _fail("matmul", a.shape, b.shape)
    out = a @ b

    def vjp(g):
        ga = g @ np.swapaxes(b, -1, -2)
        if b.ndim == 2:
            gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a, -1, -2) @ g
        return ga, gb

    return out, vjp


def _sigmoid_np(x):
    return np.exp(-np.logaddexp(0.0, -x))


@register_primitive("sigmoid")
def _sigmoid(x):
    out = _sigmoid_np(x)
    return out, lambda g: (g * out * (1.0 - out),)


@register_primitive("tanh")
def _tanh(x):
    out = np.tanh(x)
    return out, lambda g: (g * (1.0 - out * out),)


@register_primitive("relu")
def _relu(x):
    mask = x > 0
    return x * mask, lambda g: (g * mask,)


@register_primitive("exp")
def _exp(x):
    out = np.exp(x)
    return out, lambda g: (g * out,)


@register_primitive("log")
def _log(x):
    return np.log(x), lambda g: (g / x,)


def _softmax_np(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@register_primitive("row_softmax")
def _row_softmax(x):
    out = _softmax_np(x)
    return out, lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


@register_primitive("row_log_softmax")
def _row_log_softmax(x):
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    out = x - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return out, vjp


@register_primitive("concat_last_axis")
def _concat(*xs, axis=-1):
    lead = [x.shape[:axis] + x.shape[axis:][1:] for x in xs]
    if any(x.ndim != xs[0].ndim for x in xs) or any(s != lead[0] for s in lead):
        _fail("concat_last_axis", *(x.shape for x in xs))
    out = np.concatenate(xs, axis=axis)
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return out, lambda g: tuple(np.split(g, cuts, axis=axis))


@register_primitive("stack")
def _stack(*xs, axis=0):
    if any(x.shape != xs[0].shape for x in xs):
        _fail("stack", *(x.shape for x in xs))
    out = np.stack(xs, axis=axis)
    n = len(xs)
    return out, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n))


@register_primitive("slice")
def _slice(x, index):
    out = x[index]

    def vjp(g):
        gx = np.zeros_like(x)
        gx[index] = g
        return (gx,)

    return out, vjp


@register_primitive("reshape")
def _reshape(x, shape):
    if math.prod(shape) != x.size:
        _fail("reshape", x.shape, shape)
    return x.reshape(shape), lambda g: (g.reshape(x.shape),)


@register_primitive("transpose2d")
def _transpose2d(x):
    if x.ndim < 2:
        _fail("transpose2d", x.shape, why="need at least 2 axes")
    return np.swapaxes(x, -1, -2), lambda g: (np.swapaxes(g, -1, -2),)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axes)


@register_primitive("sum")
def _sum(x, axis=None, keepdims=False):
    axes = _norm_axis(axis, x.ndim)
    out = x.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return out, vjp


@register_primitive("mean")
def _mean(x, axis=None, keepdims=False):
    axes = _norm_axis(axis, x.ndim)
    n = math.prod(x.shape[a] for a in axes)
    out = x.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return out, vjp


@register_primitive("embedding_lookup")
def _embedding(table, indices):
    idx = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        _fail("embedding_lookup", table.shape, why="table must be 2-D")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError(
            f"embedding_lookup: index out of range for table of {table.shape[0]} rows"
        )
    out = table[idx]

    def vjp(g):
        gt = np.zeros_like(table)
        np.add.at(gt, idx, g)
        return (gt,)

    return out, vjp


@register_primitive("conv2d")
def _conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0, 0, 0)):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        _fail("conv2d", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[0],):
        _fail("conv2d", w.shape, b.shape, why="bias must have one entry per output channel")
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    pt, pb, pl, pr = padding
    sh, sw = stride
    Hp, Wp = H + pt + pb, W + pl + pr
    if Hp < kh or Wp < kw:
        _fail("conv2d", x.shape, w.shape, why="padded input smaller than kernel")
    Ho, Wo = (Hp - kh) // sh + 1, (Wp - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.reshape(O, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ wmat).reshape(B, Ho, Wo, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, pt:pt + H, pl:pl + W]
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return out, vjp


def _pool_windows(x, kernel, fill):
    B, C, H, W = x.shape
    kh, kw = kernel
    Ho, Wo = -(-H // kh), -(-W // kw)
    xp = np.full((B, C, Ho * kh, Wo * kw), fill)
    xp[:, :, :H, :W] = x
    win = xp.reshape(B, C, Ho, kh, Wo, kw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, kh * kw)
    return win, (B, C, H, W, Ho, Wo, kh, kw)


def _unpool(gw, dims):
    B, C, H, W, Ho, Wo, kh, kw = dims
    gxp = gw.reshape(B, C, Ho, Wo, kh, kw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * kh, Wo * kw)
    return gxp[:, :, :H, :W]


@register_primitive("maxpool2d")
def _maxpool2d(x, kernel):
    if x.ndim != 4:
        _fail("maxpool2d", x.shape, why="expected (batch, channels, height, width)")
    win, dims = _pool_windows(x, kernel, -np.inf)
    idx = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def vjp(g):
        gw = np.zeros(win.shape)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        return (_unpool(gw, dims),)

    return out, vjp


@register_primitive("avgpool2d")
def _avgpool2d(x, kernel):
    if x.ndim != 4:
        _fail("avgpool2d", x.shape, why="expected (batch, channels, height, width)")
    win, dims = _pool_windows(x, kernel, 0.0)
    ones, _ = _pool_windows(np.ones((1, 1) + x.shape[2:]), kernel, 0.0)
    counts = ones.sum(axis=-1)[0, 0]
    out = win.sum(axis=-1) / counts

    def vjp(g):
        gw = np.broadcast_to((g / counts)[..., None], win.shape)
        return (_unpool(gw, dims),)

    return out, vjp


def add(a, b):
    return apply_primitive("add", [a, b])


def sub(a, b):
    return apply_primitive("sub", [a, b])


def mul(a, b):
    return apply_primitive("elementwise_mul", [a, b])


def scalar_mul(a, c: float):
    return apply_primitive("scalar_mul", [a], c=c)


def matmul(a, b):
    return apply_primitive("matmul", [a, b])


def sigmoid(x):
    return apply_primitive("sigmoid", [x])


def tanh(x):
    return apply_primitive("tanh", [x])


def relu(x):
    return apply_primitive("relu", [x])


def exp(x):
    return apply_primitive("exp", [x])


def log(x):
    return apply_primitive("log", [x])


def softmax(x):
    return apply_primitive("row_softmax", [x])


def log_softmax(x):
    return apply_primitive("row_log_softmax", [x])


def concat(xs, axis=-1):
    return apply_primitive("concat_last_axis", list(xs), axis=axis)


def stack(xs, axis=0):
    return apply_primitive("stack", list(xs), axis=axis)


def _check_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    for it in items:
        if not (isinstance(it, (int, slice, np.integer)) or it is Ellipsis):
            raise ContractError(f"slice supports basic indexing only, got {type(it).__name__}")
    return index


def slice_(x, index):
    return apply_primitive("slice", [x], index=_check_basic_index(index))


def reshape(x, shape):
    return apply_primitive("reshape", [x], shape=tuple(shape))


def transpose2d(x):
    return apply_primitive("transpose2d", [x])


def sum_(x, axis=None, keepdims=False):
    return apply_primitive("sum", [x], axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return apply_primitive("mean", [x], axis=axis, keepdims=keepdims)


def embedding(table, indices):
    return apply_primitive("embedding_lookup", [table], indices=np.asarray(indices, dtype=np.int64))


def conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0, 0, 0)):
    inputs = [x, w] if b is None else [x, w, b]
    return apply_primitive("conv2d", inputs, stride=tuple(stride), padding=tuple(padding))


def maxpool2d(x, kernel):
    return apply_primitive("maxpool2d", [x], kernel=tuple(kernel))


def avgpool2d(x, kernel):
    return apply_primitive("avgpool2d", [x], kernel=tuple(kernel))


def uniform_init(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    """uniform(-gain/sqrt(fan_in), +gain/sqrt(fan_in))."""
    bound = gain / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
