"""
NumPy-backed tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to one gradient per
parent. :meth:`Tensor.backward` walks that graph once in reverse topological
order and then releases it, so a graph can be differentiated exactly once.

Feature maps use the N x H x W x C layout; vectors are N x F.

Broadcasting is deliberately narrow: the second operand of a binary op may
have size-1 axes where the first does not, and nothing else.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphConsumed, InvalidRate, LabelOutOfRange, ShapeMismatch

_DEFAULT_DTYPE = np.float32
_DEBUG = False
_local = threading.local()


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype used for new tensors (e.g. float64 for grad checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def set_debug(flag: bool) -> None:
    """When on, every forward op asserts its output is finite."""
    global _DEBUG
    _DEBUG = bool(flag)


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    """N-D array plus an optional gradient and the op that produced it."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype.type if arr.dtype.kind == "f" else _DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- autodiff -----------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` on every tensor reachable from this one.

        The graph is released afterwards; a second call raises GraphConsumed.
        """
        if self._consumed:
            raise GraphConsumed("graph already differentiated; re-run the forward pass")
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            fn = node._backward
            if fn is None or node.grad is None:
                continue
            parent_grads = fn(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True
        self._consumed = True


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype.type if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x, dtype=dtype)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._consumed = False
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _broadcast_axes(a_shape, b_shape) -> tuple[int, ...]:
    if a_shape == b_shape:
        return ()
    if len(a_shape) != len(b_shape):
        raise ShapeMismatch(f"cannot broadcast {b_shape} onto {a_shape}")
    axes = []
    for i, (sa, sb) in enumerate(zip(a_shape, b_shape)):
        if sa == sb:
            continue
        if sb == 1:
            axes.append(i)
        else:
            raise ShapeMismatch(f"cannot broadcast {b_shape} onto {a_shape}")
    return tuple(axes)


def _scalar_operand(b, a: Tensor) -> Tensor:
    if isinstance(b, Tensor):
        return b
    arr = np.asarray(b, dtype=a.dtype)
    if arr.ndim == 0:
        arr = arr.reshape((1,) * a.ndim)
    return Tensor(arr)


def elementwise(kind: str, a: Tensor, b) -> Tensor:
    """``add``, ``sub`` or ``mul`` with ``b`` broadcast over its size-1 axes."""
    a = as_tensor(a)
    b = _scalar_operand(b, a)
    axes = _broadcast_axes(a.shape, b.shape)

    def unbroadcast(g):
        return g.sum(axis=axes, keepdims=True) if axes else g

    if kind == "add":
        data = a.data + b.data

        def backward(g):
            return g, unbroadcast(g)
    elif kind == "sub":
        data = a.data - b.data

        def backward(g):
            return g, -unbroadcast(g)
    elif kind == "mul":
        data = a.data * b.data
        ad, bd = a.data, b.data

        def backward(g):
            return g * bd, unbroadcast(g * ad)
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return _result(data, (a, b), backward, kind)


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(data), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    original = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),), "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeMismatch(f"concat: {t.shape} incompatible with {ref} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    data = np.concatenate([t.data for t in tensors], axis=ax)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _result(data, tensors, backward, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int) -> list[Tensor]:
    """Inverse of :func:`concat`: cut ``x`` into consecutive pieces along ``axis``."""
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise ShapeMismatch(f"split sizes {list(sizes)} do not sum to {x.shape[ax]}")
    out = []
    start = 0
    for size in sizes:
        index = [slice(None)] * x.ndim
        index[ax] = slice(start, start + size)
        index = tuple(index)

        def backward(g, index=index):
            full = np.zeros_like(x.data)
            full[index] = g
            return (full,)

        out.append(_result(x.data[index].copy(), (x,), backward, "split"))
        start += size
    return out


# ---------------------------------------------------------------------------
# activations and losses
# ---------------------------------------------------------------------------

def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # rounding would otherwise hit exactly 0 or 1 for |z| beyond ~17 (f32) or ~37 (f64)
    info = np.finfo(out.dtype)
    return np.clip(out, info.tiny, np.nextafter(out.dtype.type(1), out.dtype.type(0)), out=out)


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def softmax(x: Tensor, axis: int) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _result(p, (x,), backward, "softmax")


def activation(kind: str, x: Tensor, axis: int | None = None) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    if kind == "softmax":
        if axis is None:
            raise ValueError("softmax requires an axis")
        return softmax(x, axis)
    raise ValueError(f"unknown activation {kind!r}")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ShapeMismatch(f"{labels.shape[0]} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    rows = np.arange(n)
    loss = -log_p[rows, labels].sum() / n

    def backward(g):
        d = np.exp(log_p)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) so inference is the identity."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# linear maps
# ---------------------------------------------------------------------------

def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeMismatch(f"fully_connected: x {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeMismatch(f"fully_connected: bias {bias.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    data = xd @ wd
    if bias is not None:
        data = data + bias.data

    def backward(g):
        grads = [g @ wd.T, xd.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(data, parents, backward, "fully_connected")


def _same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: str = "same",
) -> Tensor:
    """2-D convolution (cross-correlation) of NHWC input with a K x K x C_in x C_out kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatch(f"conv2d expects NHWC input and KKIO weight, got {x.shape}, {weight.shape}")
    k, k2, c_in, c_out = weight.shape
    if k != k2:
        raise ShapeMismatch("conv2d kernels must be square")
    if x.shape[3] != c_in:
        raise ShapeMismatch(f"conv2d: input has {x.shape[3]} channels, kernel expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeMismatch(f"conv2d: bias {bias.shape} for {c_out} output channels")
    n, h, w, _ = x.shape
    xd, wd = x.data, weight.data

    if k == 1 and padding in ("same", "valid"):
        xs = xd[:, ::stride, ::stride, :] if stride > 1 else xd
        ho, wo = xs.shape[1], xs.shape[2]
        w2 = wd.reshape(c_in, c_out)
        flat = xs.reshape(-1, c_in)
        data = (flat @ w2).reshape(n, ho, wo, c_out)
        if bias is not None:
            data = data + bias.data

        def backward(g):
            g2 = g.reshape(-1, c_out)
            gx = (g2 @ w2.T).reshape(n, ho, wo, c_in)
            if stride > 1:
                full = np.zeros_like(xd)
                full[:, ::stride, ::stride, :] = gx
                gx = full
            grads = [gx, (flat.T @ g2).reshape(wd.shape)]
            if bias is not None:
                grads.append(g2.sum(axis=0))
            return tuple(grads)

    else:
        if padding == "same":
            ho, top, bottom = _same_padding(h, k, stride)
            wo, left, right = _same_padding(w, k, stride)
        elif padding == "valid":
            top = bottom = left = right = 0
            ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
        else:
            raise ValueError(f"unknown padding {padding!r}")
        xp = np.pad(xd, ((0, 0), (top, bottom), (left, right), (0, 0)))
        windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
        windows = windows[:, :ho, :wo]  # N x Ho x Wo x Cin x K x K
        w_t = wd.transpose(2, 0, 1, 3)  # Cin x K x K x Cout
        cols = np.ascontiguousarray(windows).reshape(n * ho * wo, c_in * k * k)
        w_flat = w_t.reshape(c_in * k * k, c_out)
        data = (cols @ w_flat).reshape(n, ho, wo, c_out)
        if bias is not None:
            data = data + bias.data

        def backward(g):
            g2 = g.reshape(-1, c_out)
            gw = (cols.T @ g2).reshape(c_in, k, k, c_out).transpose(1, 2, 0, 3)
            gcols = (g2 @ w_flat.T).reshape(n, ho, wo, c_in, k, k)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[..., i, j]
            gx = gxp[:, top : top + h, left : left + w, :]
            grads = [np.ascontiguousarray(gx), np.ascontiguousarray(gw)]
            if bias is not None:
                grads.append(g2.sum(axis=0))
            return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(np.ascontiguousarray(data), parents, backward, "conv2d")


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def pool(kind: str, scope: str, x: Tensor, kernel: int = 3, stride: int = 1, padding: str = "same") -> Tensor:
    """Average / max / min pooling of an NHWC tensor.

    ``scope="global"`` collapses H and W to 1. ``scope="local"`` slides a
    ``kernel`` x ``kernel`` window with stride 1 and same padding; out-of-bounds
    cells are ignored, so averages divide by the count of valid cells.
    Max/min route their gradient to the first extremal cell in row-major order.
    """
    if kind not in ("avg", "max", "min"):
        raise ValueError(f"unknown pool kind {kind!r}")
    if x.ndim != 4:
        raise ShapeMismatch(f"pool expects NHWC input, got {x.shape}")
    if scope == "global":
        return _global_pool(kind, x)
    if scope != "local":
        raise ValueError(f"unknown pool scope {scope!r}")
    if stride != 1 or padding != "same" or kernel % 2 != 1:
        raise ValueError("local pooling supports odd kernels with stride 1 and same padding only")
    return _local_pool(kind, x, kernel)


def _global_pool(kind: str, x: Tensor) -> Tensor:
    n, h, w, c = x.shape
    flat = x.data.reshape(n, h * w, c)
    if kind == "avg":
        data = flat.mean(axis=1).reshape(n, 1, 1, c)

        def backward(g):
            return (np.broadcast_to(g / (h * w), x.shape).copy(),)

        return _result(data, (x,), backward, "global_avg_pool")

    idx = flat.argmax(axis=1) if kind == "max" else flat.argmin(axis=1)  # first on ties
    data = np.take_along_axis(flat, idx[:, None, :], axis=1).reshape(n, 1, 1, c)

    def backward(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx[:, None, :], g.reshape(n, 1, c), axis=1)
        return (gf.reshape(x.shape),)

    return _result(data, (x,), backward, f"global_{kind}_pool")


def _local_pool(kind: str, x: Tensor, kernel: int) -> Tensor:
    n, h, w, c = x.shape
    r = kernel // 2
    pads = ((0, 0), (r, r), (r, r), (0, 0))
    if kind == "avg":
        xp = np.pad(x.data, pads)
        acc = np.zeros_like(x.data)
        for i in range(kernel):
            for j in range(kernel):
                acc += xp[:, i : i + h, j : j + w, :]
        ones = np.pad(np.ones((1, h, w, 1), dtype=x.dtype), pads)
        count = np.zeros((1, h, w, 1), dtype=x.dtype)
        for i in range(kernel):
            for j in range(kernel):
                count += ones[:, i : i + h, j : j + w, :]
        data = acc / count

        def backward(g):
            gs = np.pad(g / count, pads)
            gx = np.zeros_like(x.data)
            # each input cell receives g/count from every window that covers it
            for i in range(kernel):
                for j in range(kernel):
                    gx += gs[:, 2 * r - i : 2 * r - i + h, 2 * r - j : 2 * r - j + w, :]
            return (gx,)

        return _result(data, (x,), backward, "local_avg_pool")

    fill = -np.inf if kind == "max" else np.inf
    xp = np.pad(x.data, pads, constant_values=fill)
    windows = sliding_window_view(xp, (kernel, kernel), axis=(1, 2))  # N H W C k k
    windows = windows.reshape(n, h, w, c, kernel * kernel)
    idx = windows.argmax(axis=-1) if kind == "max" else windows.argmin(axis=-1)
    data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for k in range(kernel * kernel):
            i, j = divmod(k, kernel)
            gxp[:, i : i + h, j : j + w, :] += np.where(idx == k, g, 0.0)
        return (gxp[:, r : r + h, r : r + w, :],)

    return _result(np.ascontiguousarray(data), (x,), backward, f"local_{kind}_pool")


def ones_like(x: Tensor) -> Tensor:
    return Tensor(np.ones_like(x.data))


def zeros(shape: Iterable[int], dtype=None) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=dtype or _DEFAULT_DTYPE))
