"""Dense tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays.  While a :class:`Tape` is active
(``with Tape() as tape:``) every op whose inputs require gradients is
appended to the tape, and every multiply-accumulate heavy op (conv,
depthwise conv, linear, matmul) adds its MUL-ADD count to the tape's
counter.  Outside a tape, ops are plain forward computations.

Model state is float32.  :func:`shadow64` switches the default dtype to
float64 for finite-difference oracles; ops always keep the dtype of their
inputs.
"""

from __future__ import annotations

import builtins
import contextlib
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BoundsError, ContractError, DimensionError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def default_dtype():
    return getattr(_local, "dtype", np.float32)


@contextlib.contextmanager
def shadow64():
    """Create new tensors in float64 for the duration of the block."""
    prev = default_dtype()
    _local.dtype = np.float64
    try:
        yield
    finally:
        _local.dtype = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else default_dtype()
        self.data = np.asarray(arr, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def _not_scalar(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else default_dtype()))


@dataclass
class MulAddCounter:
    """Multiply-accumulate tally; ``total`` is always the sum of ``breakdown``."""

    breakdown: dict = field(default_factory=lambda: defaultdict(int))

    @property
    def total(self) -> int:
        return int(builtins.sum(self.breakdown.values()))

    def add(self, op: str, count: int):
        self.breakdown[op] += int(count)

    def merge(self, other: "MulAddCounter"):
        for k, v in other.breakdown.items():
            self.breakdown[k] += v

    def scoped(self, prefix: str) -> int:
        """Sum of every entry recorded under ``prefix`` (a scope path)."""
        return int(builtins.sum(v for k, v in self.breakdown.items() if k == prefix or k.startswith(prefix + "/")))

    def as_dict(self) -> dict:
        return {k: int(v) for k, v in sorted(self.breakdown.items())}


@dataclass
class _Node:
    out: Tensor
    parents: tuple
    vjp: Callable


class Tape:
    """Ordered record of executed ops plus the MUL-ADD counter for them."""

    def __init__(self, record: bool = True):
        self.nodes: list[_Node] = []
        self.counter = MulAddCounter()
        self.recording = record
        self._scopes: list[str] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    @contextlib.contextmanager
    def scope(self, name: str):
        """Prefix counter entries with ``name/`` inside the block."""
        self._scopes.append(name)
        try:
            yield
        finally:
            self._scopes.pop()

    def count(self, op: str, n: int):
        key = "/".join(self._scopes + [op])
        self.counter.add(key, n)

    def backward(self, loss: Tensor, inputs: Sequence[Tensor] | None = None):
        backward(loss, self, inputs=inputs)


@contextlib.contextmanager
def counting():
    """Count MUL-ADDs without recording a graph."""
    with Tape(record=False) as t:
        yield t.counter


def _count(op: str, n: int):
    t = active_tape()
    if t is not None:
        t.count(op, n)


def _make(data: np.ndarray, parents: tuple, vjp: Callable) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    t = active_tape()
    if t is not None and t.recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        t.nodes.append(_Node(out, parents, vjp))
    return out


def backward(loss: Tensor, tape: Tape, inputs: Sequence[Tensor] | None = None):
    """Propagate d(loss)/d(node) back through ``tape``.

    Leaf tensors with ``requires_grad`` accumulate into ``.grad``; recorded
    intermediates have ``.grad`` set.  When ``inputs`` is given only those
    tensors receive gradients and nothing else is touched.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    only = None if inputs is None else {id(t) for t in inputs}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    held: dict[int, Tensor] = {id(loss): loss}
    produced = set()
    for node in reversed(tape.nodes):
        key = id(node.out)
        produced.add(key)
        g = grads.pop(key, None)
        if g is None:
            continue
        held.pop(key, None)
        if only is None:
            node.out.grad = g
        elif key in only:
            node.out.grad = g if node.out.grad is None else node.out.grad + g
        pgs = node.vjp(g)
        for p, pg in zip(node.parents, pgs):
            if pg is None or not p.requires_grad:
                continue
            pk = id(p)
            if pk in grads:
                grads[pk] = grads[pk] + pg
            else:
                grads[pk] = pg
                held[pk] = p
    for key, g in grads.items():
        t = held[key]
        if key in produced or (only is not None and key not in only):
            continue
        g = g.astype(t.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------- helpers


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from None
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    out = a.data * b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _make(s, (a,), lambda g: (g * s * (1 - s),))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (max-subtracted)."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (a,), vjp)


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _make(out, (a,), lambda g: (g - s * g.sum(axis=-1, keepdims=True),))


# ---------------------------------------------------------------- reductions / shape


def _axes(x: Tensor, axes) -> tuple:
    if axes is None:
        return tuple(range(x.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % x.ndim for ax in axes)


def sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    ax = _axes(a, axes)
    out = a.data.sum(axis=ax, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out, dtype=a.dtype), (a,), vjp)


def mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    ax = _axes(a, axes)
    n = int(np.prod([a.shape[i] for i in ax])) if ax else 1
    return scale(sum(a, ax, keepdims), 1.0 / n)


def global_avg_pool(a: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes: [..., C, H, W] -> [..., C]."""
    if a.ndim < 3:
        raise DimensionError(f"global_avg_pool needs [..., C, H, W], got {a.shape}")
    return mean(a, (-2, -1))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(ax % a.ndim for ax in axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"cannot concat shapes {[t.shape for t in tensors]} on axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"cannot stack shapes {[t.shape for t in tensors]}") from None
    n = len(tensors)
    return _make(
        out,
        tuple(tensors),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


def crop(a: Tensor, offsets: Sequence[int], sizes: Sequence[int]) -> Tensor:
    """Slice ``a[o0:o0+s0, o1:o1+s1, ...]`` over the leading axes."""
    if len(offsets) != len(sizes) or len(offsets) > a.ndim:
        raise DimensionError(f"crop offsets {offsets} / sizes {sizes} do not fit shape {a.shape}")
    for ax, (o, s) in enumerate(zip(offsets, sizes)):
        if o < 0 or s < 1 or o + s > a.shape[ax]:
            raise BoundsError(
                f"crop [{o}, {o + s}) out of bounds for axis {ax} of extent {a.shape[ax]}"
            )
    sl = tuple(slice(o, o + s) for o, s in zip(offsets, sizes))

    def vjp(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[sl] = g
        return (full,)

    return _make(a.data[sl].copy(), (a,), vjp)


def index(a: Tensor, idx) -> Tensor:
    """Basic/advanced numpy indexing with a scatter-add gradient."""
    out = np.asarray(a.data[idx], dtype=a.dtype)

    def vjp(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out.copy(), (a,), vjp)


# ---------------------------------------------------------------- contractions


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis; ``weight`` is [D_out, D_in]."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise DimensionError(f"linear: input {x.shape} last extent != weight {weight.shape} D_in")
    if bias is not None and bias.shape != (d_out,):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    batch = int(np.prod(x.shape[:-1])) if x.ndim > 1 else 1
    _count("linear", batch * d_out * d_in)
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        g2 = g.reshape(-1, d_out)
        gx = g @ weight.data
        gw = g2.T @ x.data.reshape(-1, d_in)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the two trailing axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    m, k = a.shape[-2:]
    n = b.shape[-1]
    batch = int(np.prod(out.shape[:-2])) if out.ndim > 2 else 1
    _count("matmul", batch * m * k * n)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), vjp)


def _batched(x: Tensor, rank: int):
    """Accept [C,H,W] or [B,C,H,W]; returns (4d view, squeeze flag)."""
    if x.ndim == rank - 1:
        return x.data[None], True
    if x.ndim == rank:
        return x.data, False
    raise DimensionError(f"expected a [C,H,W] or [B,C,H,W] input, got {x.shape}")


def _out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is [C_in,H,W] or [B,C_in,H,W]; ``kernel`` is [C_out,C_in,K_h,K_w].
    """
    xd, squeeze = _batched(x, 4)
    if kernel.ndim != 4:
        raise DimensionError(f"conv2d kernel must be [C_out,C_in,K_h,K_w], got {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    bsz, c, h, w = xd.shape
    if c != c_in:
        raise DimensionError(f"conv2d: input shape {x.shape} has {c} channels but kernel shape {kernel.shape} expects {c_in}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kernel.shape} larger than padded input {x.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias {bias.shape} does not match {c_out} output channels")
    s = int(stride)
    ho, wo = _out_extent(h, kh, s, padding), _out_extent(w, kw, s, padding)
    _count("conv2d", bsz * c_out * c_in * kh * kw * ho * wo)

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    if kh == 1 and kw == 1:
        cols = xp[:, :, ::s, ::s][:, :, :ho, :wo].transpose(0, 2, 3, 1).reshape(-1, c_in)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, c_in * kh * kw)
    wm = kernel.data.reshape(c_out, -1)
    if c_in == 1:
        # tap-by-tap accumulation, same order as depthwise_conv2d, so the two agree bit for bit
        out = np.zeros((bsz, c_out, ho, wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                out += xp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] * kernel.data[:, 0, i, j][None, :, None, None]
        if bias is not None:
            out += bias.data[None, :, None, None]
    else:
        out = cols @ wm.T
        if bias is not None:
            out += bias.data
        out = np.ascontiguousarray(out.reshape(bsz, ho, wo, c_out).transpose(0, 3, 1, 2))
    if squeeze:
        out = out[0]

    def vjp(g):
        g4 = g[None] if squeeze else g
        gr = g4.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gk = (gr.T @ cols).reshape(kernel.shape)
        dcols = (gr @ wm).reshape(bsz, ho, wo, c_in, kh, kw)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += dcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        if squeeze:
            gx = gx[0]
        grads = [np.ascontiguousarray(gx), gk]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, vjp)


def depthwise_conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel cross-correlation; ``kernel`` is [C,K_h,K_w], channels never mix."""
    xd, squeeze = _batched(x, 4)
    if kernel.ndim != 3:
        raise DimensionError(f"depthwise kernel must be [C,K_h,K_w], got {kernel.shape}")
    c, kh, kw = kernel.shape
    bsz, cx, h, w = xd.shape
    if cx != c:
        raise DimensionError(f"depthwise_conv2d: input shape {x.shape} has {cx} channels but kernel shape {kernel.shape} has {c}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"depthwise_conv2d: kernel {kernel.shape} larger than padded input {x.shape}")
    s = int(stride)
    ho, wo = _out_extent(h, kh, s, padding), _out_extent(w, kw, s, padding)
    _count("depthwise_conv2d", bsz * c * kh * kw * ho * wo)

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    k = kernel.data
    out = np.zeros((bsz, c, ho, wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] * k[:, i, j][None, :, None, None]
    if bias is not None:
        out += bias.data[None, :, None, None]
    if squeeze:
        out = out[0]

    def vjp(g):
        g4 = g[None] if squeeze else g
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        gk = np.zeros(k.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))
                gk[:, i, j] = (g4 * xp[sl]).sum(axis=(0, 2, 3))
                gxp[sl] += g4 * k[:, i, j][None, :, None, None]
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        if squeeze:
            gx = gx[0]
        grads = [np.ascontiguousarray(gx), gk]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, vjp)


# ---------------------------------------------------------------- losses

BCE_EPS = 1e-7


def bce(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy; ``pred`` is clamped to [1e-7, 1-1e-7]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.shape != pred.shape:
        raise DimensionError(f"bce: pred shape {pred.shape} != target shape {t.shape}")
    t = t.astype(pred.dtype)
    p = np.clip(pred.data, BCE_EPS, 1 - BCE_EPS)
    n = pred.data.size
    loss = -(t * np.log(p) + (1 - t) * np.log(1 - p)).sum() / n
    inside = (pred.data >= BCE_EPS) & (pred.data <= 1 - BCE_EPS)

    def vjp(g):
        return (g * inside * (p - t) / (p * (1 - p)) / n,)

    return _make(np.asarray(loss, dtype=pred.dtype), (pred,), vjp)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy.  ``logits`` is [K] or [B,K]."""
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    z = logits.data[None] if logits.ndim == 1 else logits.data
    if z.ndim != 2 or lab.shape != (z.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {lab.shape}")
    k = z.shape[1]
    if lab.min() < 0 or lab.max() >= k:
        raise BoundsError(f"cross_entropy: label out of range for {k} classes")
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - lse
    b = z.shape[0]
    loss = -logp[np.arange(b), lab].mean()

    def vjp(g):
        d = np.exp(logp)
        d[np.arange(b), lab] -= 1
        d = d * (g / b)
        return (d.reshape(logits.shape),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), vjp)
