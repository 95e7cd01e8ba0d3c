"""Dense tensors with tape-based reverse-mode differentiation.

Arrays live in NumPy buffers.  Differentiation is recorded on a :class:`Tape`
that is active for the duration of a ``with`` block::

    with Tape() as tape:
        loss = (x @ w).sum()
    (gw,) = backward(tape, loss, [w])

Only tensors created with ``requires_grad=True`` (and results derived from
them while a tape is active) are recorded.  Outside a tape every operation is
a plain NumPy computation.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_SQRT2 = 2.0**0.5
_INV_SQRT_2PI = 1.0 / (2.0 * np.pi) ** 0.5
DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Incompatible tensor shapes for an operation."""


class DTypeError(TypeError):
    """Operands with different floating point types."""


# ---------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("op", "out", "inputs", "vjp")

    def __init__(self, op: str, out: "Tensor", inputs: tuple, vjp: Callable):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of differentiable operations for one forward pass.

    Nodes are appended as operations execute, so the list is already in
    topological order.  A tape is bound to the thread that entered it.
    """

    _local = threading.local()

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(Tape._local, "stack", None)
        if stack is None:
            stack = Tape._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def gradient(self, loss: "Tensor", params: Sequence["Tensor"]) -> list[np.ndarray]:
        return backward(self, loss, params)

    @staticmethod
    def current() -> "Tape | None":
        stack = getattr(Tape._local, "stack", None)
        return stack[-1] if stack else None


def backward(tape: Tape, loss: "Tensor", params: Sequence["Tensor"]) -> list[np.ndarray]:
    """Gradients of the scalar ``loss`` with respect to ``params``.

    Each recorded node is visited once, in reverse order.  Parameters that do
    not influence the loss get a zero gradient.  The tape is cleared
    afterwards, releasing all saved activations.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out = []
    for p in params:
        g = grads.get(id(p))
        out.append(np.zeros_like(p.data) if g is None else g.astype(p.dtype, copy=False))
    tape.nodes.clear()
    return out


# ---------------------------------------------------------------------------
# tensor


class Tensor:
    """Row-major dense array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float64 if dtype is None else dtype)
        # ascontiguousarray would promote 0-d arrays to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, e):
        return power(self, e)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, dtype=None, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _check_dtype(*ts: Tensor) -> None:
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise DTypeError(f"dtype mismatch: {dt} vs {t.dtype}")


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} are not broadcast-compatible") from None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _record(op: str, out_data: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    tape = Tape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(out_data, requires_grad=True)
        tape.nodes.append(_Node(op, out, inputs, vjp))
        return out
    return Tensor(out_data)


def _scalar_or_tensor(x, like: Tensor):
    """Python numbers stay scalars (cheap broadcast); everything else is lifted."""
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return x
    return _lift(x, like)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _scalar_or_tensor(b, a)
    if not isinstance(b, Tensor):
        return _record("add_scalar", a.data + b, (a,), lambda g: (g,))
    _check_dtype(a, b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        return add(neg(b), a)
    b = _scalar_or_tensor(b, a)
    if not isinstance(b, Tensor):
        return _record("sub_scalar", a.data - b, (a,), lambda g: (g,))
    _check_dtype(a, b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _scalar_or_tensor(b, a)
    if not isinstance(b, Tensor):
        return _record("mul_scalar", a.data * b, (a,), lambda g: (g * b,))
    _check_dtype(a, b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record("mul", ad * bd, (a, b), vjp)


def div(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _scalar_or_tensor(b, a)
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / b)
    _check_dtype(a, b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record("div", out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def power(a: Tensor, e: float) -> Tensor:
    ad = a.data
    return _record("pow", ad**e, (a,), lambda g: (g * e * ad ** (e - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _record("log", np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def tabs(a: Tensor) -> Tensor:
    ad = a.data
    return _record("abs", np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """Exact GeLU, x * Phi(x)."""
    x = a.data
    cdf = erf(x * (1.0 / _SQRT2))
    cdf += 1.0
    cdf *= 0.5
    out = x * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x * x)
        pdf *= _INV_SQRT_2PI
        pdf *= x
        pdf += cdf
        return (g * pdf,)

    return _record("gelu", out, (a,), vjp)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    keep = a.data >= lo
    return _record("clamp_min", np.maximum(a.data, lo).astype(a.dtype), (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", np.asarray(out), (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {src} into {tuple(shape)}") from None
    return _record("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _record("transpose", out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def roll(a: Tensor, shift, axis) -> Tensor:
    if isinstance(shift, int):
        back = -shift
    else:
        back = tuple(-s for s in shift)
    return _record("roll", np.roll(a.data, shift, axis), (a,), lambda g: (np.roll(g, back, axis),))


def index(a: Tensor, idx) -> Tensor:
    shape, dt = a.shape, a.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dt)
        np.add.at(full, idx, g)
        return (full,)

    return _record("index", np.array(a.data[idx]), (a,), vjp)


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(ts)
    _check_dtype(*ts)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _record("concat", np.concatenate([t.data for t in ts], axis), ts, lambda g: tuple(np.split(g, sizes, axis)))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b, a if isinstance(a, Tensor) else None)
    _check_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # weight-sharing fast path: fold batch dims into rows
        k = ad.shape[-1]
        out = (ad.reshape(-1, k) @ bd).reshape(ad.shape[:-1] + (bd.shape[1],))

        def vjp(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = ad.reshape(-1, k).T @ g2 if b.requires_grad else None
            return ga, gb

        return _record("matmul", out, (a, b), vjp)

    _broadcast_shape(ad.shape[:-2], bd.shape[:-2])
    out = ad @ bd

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record("matmul", out, (a, b), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record("softmax", y, (a,), vjp)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize over the last axis (no affine part)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _record("layer_norm", y, (a,), vjp)


def l2_normalize(a: Tensor, axis: int = -1, floor: float = 1e-8) -> Tensor:
    """x / max(|x|, floor) along ``axis``."""
    x = a.data
    n = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    d = np.maximum(n, floor)
    y = x / d
    active = n > floor

    def vjp(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        return ((g - np.where(active, y * proj, 0)) / d,)

    return _record("l2_normalize", y, (a,), vjp)


# ---------------------------------------------------------------------------
# convolution


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"conv2d expects [C,H,W] or [B,C,H,W], got {x.shape}")


def _xcorr(xp: np.ndarray, w: np.ndarray, H: int, W: int) -> np.ndarray:
    # xp [B,Ci,H+k-1,W+k-1], w [Co,Ci,k,k] -> [B,Co,H,W]
    k = w.shape[-1]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # [B,Ci,H,W,k,k]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # [B,H,W,Co]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d(x: Tensor, kernel: Tensor, depthwise: bool = False) -> Tensor:
    """Same-size 2-D cross-correlation with zero padding (k-1)/2.

    ``kernel`` is ``[C_out, C_in, k, k]`` for a full convolution or ``[C, k, k]``
    for a depthwise one.  ``x`` may be ``[C, H, W]`` or batched ``[B, C, H, W]``.
    """
    _check_dtype(x, kernel)
    k = kernel.shape[-1]
    if k % 2 == 0 or kernel.shape[-2] != k:
        raise ShapeError(f"conv2d needs an odd square kernel, got {kernel.shape}")
    xd, squeezed = _as_batched(x.data)
    B, C, H, W = xd.shape
    pad = (k - 1) // 2
    wd = kernel.data
    if depthwise:
        if wd.shape != (C, k, k):
            raise ShapeError(f"depthwise kernel {wd.shape} does not match {C} input channels")
    elif wd.ndim != 4 or wd.shape[1] != C:
        raise ShapeError(f"kernel {wd.shape} does not match {C} input channels")
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

    if depthwise:
        out = np.zeros_like(xd)
        for i in range(k):
            for j in range(k):
                out += xp[:, :, i : i + H, j : j + W] * wd[None, :, i, j, None, None]
    else:
        out = _xcorr(xp, wd, H, W)

    def vjp(g):
        gb = g[None] if squeezed else g
        gx = gw = None
        if depthwise:
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i : i + H, j : j + W] += gb * wd[None, :, i, j, None, None]
                gx = gxp[:, :, pad : pad + H, pad : pad + W]
            if kernel.requires_grad:
                gw = np.empty_like(wd)
                for i in range(k):
                    for j in range(k):
                        gw[:, i, j] = (gb * xp[:, :, i : i + H, j : j + W]).sum(axis=(0, 2, 3))
        else:
            if x.requires_grad:
                gp = np.pad(gb, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
                wf = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
                gx = _xcorr(gp, wf, H, W)
            if kernel.requires_grad:
                win = sliding_window_view(xp, (k, k), axis=(2, 3))  # [B,Ci,H,W,k,k]
                gw = np.tensordot(gb, win, axes=([0, 2, 3], [0, 2, 3]))  # [Co,Ci,k,k]
        if gx is not None:
            gx = np.ascontiguousarray(gx[0] if squeezed else gx)
        return gx, gw

    return _record("conv2d", out[0] if squeezed else out, (x, kernel), vjp)


# ---------------------------------------------------------------------------
# helpers


def ones_like(a: Tensor) -> Tensor:
    return Tensor(np.ones_like(a.data))


def zeros_like(a: Tensor) -> Tensor:
    return Tensor(np.zeros_like(a.data))


def parameters_of(items: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in items if t.requires_grad]
