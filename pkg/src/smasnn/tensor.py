"""Dense float64 arrays with reverse-mode automatic differentiation.

A :class:`Value` wraps a numpy array. Operations on values that require
gradients record a node holding the parents and a closure mapping the
output gradient to parent gradients. :meth:`Value.backward` walks the
recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

DTYPE = np.float64

_GRAD_ENABLED = True


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


def grad_enabled() -> bool:
    return _GRAD_ENABLED


# Branch decisions of piecewise ops (ReLU masks, max-pool winners), collected
# only while gradcheck probes a coordinate.
_BRANCHES: list | None = None


def _note_branch(decision: np.ndarray) -> None:
    if _BRANCHES is not None:
        _BRANCHES.append(decision.copy())


@contextlib.contextmanager
def _recording_branches():
    global _BRANCHES
    prev, _BRANCHES = _BRANCHES, []
    try:
        yield _BRANCHES
    finally:
        _BRANCHES = prev


class Value:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_consumed")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"zero-sized extent in shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Value, ...] = ()
        self._backward: Callable | None = None
        self._op = ""
        self._consumed = False

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> Value:
        return Value(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        op = f", op={self._op}" if self._op else ""
        return f"Value(shape={self.shape}{op})"

    # -- arithmetic ------------------------------------------------------
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
        if isinstance(other, Value):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Value:
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Value:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Value:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Value:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def relu(self) -> Value:
        return relu(self)

    # -- reverse pass ----------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring it."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("backward already ran through this graph; rebuild the forward pass")
        topo = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if g is not None and node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node._consumed = True
            if g is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            node._backward = None
            node._parents = ()


def _toposort(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def make_op(data: np.ndarray, parents: Sequence[Value], backward: Callable, op: str) -> Value:
    """Wrap ``data`` as the output of a differentiable operation.

    ``backward(g)`` must return one gradient (or ``None``) per parent.
    """
    out = Value.__new__(Value)
    out.data = data if data.dtype == DTYPE else data.astype(DTYPE)
    out.grad = None
    out.name = None
    out._consumed = False
    rg = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = rg
    if rg:
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    else:
        out._parents = ()
        out._backward = None
        out._op = ""
    return out


def _check_consumed(*vals: Value) -> None:
    for v in vals:
        if v._consumed:
            raise RuntimeError("operand belongs to a graph whose backward already ran")


# ---------------------------------------------------------------------------
# broadcasting helpers


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} are not broadcastable") from None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_op(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return make_op(out, (a, b), backward, "div")


def scale(a: Value, c: float) -> Value:
    c = float(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Value) -> Value:
    mask = a.data > 0
    _note_branch(mask)
    return make_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def exp(a: Value) -> Value:
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Value) -> Value:
    ad = a.data
    return make_op(np.log(ad), (a,), lambda g: (g / ad,), "log")


def square(a: Value) -> Value:
    ad = a.data
    return make_op(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(out))


def sum_(a: Value, axis=None, keepdims: bool = False) -> Value:
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kshape), shape),)

    return make_op(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), backward, "sum")


def mean(a: Value, axis=None, keepdims: bool = False) -> Value:
    axes = _norm_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    shape = a.shape
    kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kshape) / count, shape),)

    return make_op(np.asarray(a.data.mean(axis=axes, keepdims=keepdims)), (a,), backward, "mean")


def reshape(a: Value, shape: tuple) -> Value:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} into {shape}") from None
    return make_op(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Value, axes=None) -> Value:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a: Value, index) -> Value:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return make_op(np.array(a.data[index]), (a,), backward, "getitem")


def stack(values: Sequence[Value], axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    shapes = {v.shape for v in values}
    if len(shapes) != 1:
        raise ShapeError(f"stack needs equal shapes, got {sorted(shapes)}")
    out = np.stack([v.data for v in values], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(values)))

    return make_op(out, values, backward, "stack")


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    try:
        out = np.concatenate([v.data for v in values], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    ax = axis % out.ndim
    bounds = np.cumsum([v.shape[ax] for v in values])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_op(out, values, backward, "concat")


# ---------------------------------------------------------------------------
# softmax family


def softmax(a: Value, axis: int = -1) -> Value:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (a,), backward, "softmax")


def log_softmax(a: Value, axis: int = -1) -> Value:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make_op(out, (a,), backward, "log_softmax")


# ---------------------------------------------------------------------------
# affine layer


def affine(x: Value, weight: Value, bias: Value | None = None) -> Value:
    """``x @ weight.T + bias`` over the last axis of ``x``; weight is (out, in)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"affine: input features {x.shape[-1:]} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        if bias.shape != (wd.shape[0],):
            raise ShapeError(f"affine: bias {bias.shape} vs out features {wd.shape[0]}")
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g @ wd) if x.requires_grad else None
        gw = g2.T @ xd.reshape(-1, xd.shape[-1]) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_op(out, parents, backward, "affine")


# ---------------------------------------------------------------------------
# convolution


def same_padding(k: int) -> int:
    if k % 2 != 1:
        raise ShapeError(f"same padding needs an odd kernel, got {k}")
    return (k - 1) // 2


def _row_windows(xl: np.ndarray, i: int, k: int, ho: int, wo: int, stride: int) -> np.ndarray:
    """Rows ``i`` of every k x k window of channels-last ``xl`` as (N*Ho*Wo, k*C)."""
    rows = xl[:, i : i + stride * (ho - 1) + 1 : stride]
    win = sliding_window_view(rows, k, axis=2)[:, :, ::stride]  # (N, Ho, Wo, C, k)
    return win.transpose(0, 1, 2, 4, 3).reshape(-1, k * xl.shape[3])


def _correlate(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Cross-correlate padded (N, C, H, W) with (O, C, k, k); returns (N, O, Ho, Wo).

    One matrix product per kernel row on a channels-last copy keeps the
    working set at 1/k of a full im2col buffer.
    """
    n, c, hp, wp = xp.shape
    o, k = w.shape[0], w.shape[-1]
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    xl = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    wl = w.transpose(2, 3, 1, 0).reshape(k, k * c, o)  # row i: (j, c) x o
    out = _row_windows(xl, 0, k, ho, wo, stride) @ wl[0]
    for i in range(1, k):
        out += _row_windows(xl, i, k, ho, wo, stride) @ wl[i]
    return np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def _kernel_grad(xp: np.ndarray, g: np.ndarray, k: int, stride: int) -> np.ndarray:
    c = xp.shape[1]
    o, ho, wo = g.shape[1:]
    xl = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    gl = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
    rows = [gl.T @ _row_windows(xl, i, k, ho, wo, stride) for i in range(k)]  # each (O, k*C)
    return np.stack(rows).reshape(k, o, k, c).transpose(1, 3, 0, 2)


def conv2d(x: Value, kernel: Value, bias: Value | None = None, stride: int = 1, padding: int = 0) -> Value:
    """2-D cross-correlation of (N, C, H, W) or (C, H, W) input with an (O, C, k, k) kernel."""
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {ck} (kernel {kernel.shape})")
    if kh != kw:
        raise ShapeError(f"conv2d: only square kernels, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride {stride} / padding {padding}")
    k = kh
    hp, wp = h + 2 * padding, w + 2 * padding
    if k > hp or k > wp:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {hp}x{wp}")
    xd, wd = x.data, kernel.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    out = _correlate(xp, wd, stride)
    if bias is not None:
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias {bias.shape} vs {o} output channels")
        out += bias.data[None, :, None, None]
    ho, wo = out.shape[2], out.shape[3]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gk = None
        if kernel.requires_grad:
            gk = _kernel_grad(xp, g, k, stride)
        gx = None
        if x.requires_grad:
            if stride > 1:
                gd = np.zeros((n, o, (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=DTYPE)
                gd[:, :, ::stride, ::stride] = g
            else:
                gd = g
            if k > 1:
                gd = np.pad(gd, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
            flipped = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            part = _correlate(gd, flipped, 1)
            gxp = np.zeros((n, c, hp, wp), dtype=DTYPE)
            gxp[:, :, : part.shape[2], : part.shape[3]] = part
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    res = make_op(out, parents, backward, "conv2d")
    if unbatched:
        res = reshape(res, res.shape[1:])
    return res


# ---------------------------------------------------------------------------
# normalization


def batch_norm(
    x: Value,
    gamma: Value,
    beta: Value,
    running_mean: np.ndarray | None,
    running_var: np.ndarray | None,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
    channel_axis: int = 1,
) -> Value:
    """Per-channel batch normalization.

    Statistics pool every axis except ``channel_axis``. In training mode the
    running buffers (if given) are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    ax = channel_axis % x.ndim
    c = x.shape[ax]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma {gamma.shape} / beta {beta.shape} vs {c} channels")
    red = tuple(i for i in range(x.ndim) if i != ax)
    bshape = tuple(c if i == ax else 1 for i in range(x.ndim))
    xd = x.data
    if training:
        mu = xd.mean(axis=red)
        var = xd.var(axis=red)
        if running_mean is not None:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu
        if running_var is not None:
            running_var *= momentum
            running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean, running_var
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(bshape)) * invstd.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    out = xhat * gd + beta.data.reshape(bshape)
    m = xd.size // c

    def backward(g):
        gg = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gb = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            if training:
                s1 = dxhat.sum(axis=red).reshape(bshape)
                s2 = (dxhat * xhat).sum(axis=red).reshape(bshape)
                gx = (invstd.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * invstd.reshape(bshape)
        return gx, gg, gb

    return make_op(out, (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------------------
# pooling


def max_pool2d(x: Value, window: int, stride: int | None = None, padding: int = 0) -> Value:
    """Max pooling over the last two axes; ties route gradient to the lowest index."""
    stride = window if stride is None else stride
    lead = x.shape[:-2]
    h, w = x.shape[-2:]
    hp, wp = h + 2 * padding, w + 2 * padding
    if window > hp or window > wp:
        raise ShapeError(f"max_pool2d: window {window} exceeds padded extent {hp}x{wp}")
    xd = x.data.reshape((-1, h, w))
    mcount = xd.shape[0]
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf) if padding else xd
    win = sliding_window_view(xp, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    flat = win.reshape(mcount, ho, wo, window * window)
    idx = flat.argmax(axis=-1)
    _note_branch(idx)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        rows = np.arange(ho)[:, None] * stride + idx // window
        cols = np.arange(wo)[None, :] * stride + idx % window
        pos = np.arange(mcount)[:, None, None] * (hp * wp) + rows * wp + cols
        gxp = np.bincount(pos.ravel(), weights=g.reshape(-1), minlength=mcount * hp * wp)
        gxp = gxp.reshape(mcount, hp, wp)[:, padding : padding + h, padding : padding + w]
        return (gxp.reshape(lead + (h, w)),)

    return make_op(out.reshape(lead + (ho, wo)), (x,), backward, "max_pool2d")


def avg_pool_global(x: Value) -> Value:
    """Mean over the last two (spatial) axes, keeping them as 1x1."""
    return mean(x, axis=(-2, -1), keepdims=True)


# ---------------------------------------------------------------------------
# gradient checking


def gradcheck(
    fn: Callable[[], Value],
    inputs: Iterable[Value],
    n_coords: int = 20,
    step: float = 1e-4,
    rng: np.random.Generator | None = None,
    max_redraws: int = 1000,
) -> float:
    """Largest |analytic - central difference| / max(1, |analytic|) over random coordinates.

    ``fn`` recomputes a scalar from the current contents of ``inputs``. A
    coordinate whose +/- ``step`` probes flip a ReLU mask or a max-pool
    winner straddles a kink, where the central difference is not a
    derivative estimate; such coordinates are redrawn.
    """
    inputs = list(inputs)
    rng = np.random.default_rng(0) if rng is None else rng
    for v in inputs:
        v.data = np.ascontiguousarray(v.data)
        v.requires_grad = True
        v.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(v.data) if v.grad is None else v.grad.copy() for v in inputs]
    worst = 0.0
    checked = redraws = 0
    with no_grad():
        while checked < n_coords:
            i = int(rng.integers(len(inputs)))
            v = inputs[i]
            j = int(rng.integers(v.size))
            flat = v.data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + step
            with _recording_branches() as plus:
                fp = fn().item()
            flat[j] = orig - step
            with _recording_branches() as minus:
                fm = fn().item()
            flat[j] = orig
            if len(plus) != len(minus) or any(not np.array_equal(a, b) for a, b in zip(plus, minus)):
                redraws += 1
                if redraws > max_redraws:
                    raise RuntimeError(f"gradcheck: {redraws} probes straddled kinks; use a smaller step")
                continue
            numeric = (fp - fm) / (2 * step)
            a = analytic[i].reshape(-1)[j]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
            checked += 1
    return worst
