"""Dense tensors with reverse-mode automatic differentiation.

Every array is laid out as (batch, channel, height, width) when it is an image
or feature map. Each differentiable operation records its parents and a
closure mapping the output gradient to per-parent gradients; ``backward``
walks the resulting tape in reverse topological order.

Set ``STRICT_FINITE=1`` in the environment to assert that every forward
output and every propagated gradient is finite.
"""

import contextlib
import os
from math import prod
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, DimensionError, NonFiniteError, UsageError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


def _strict_finite():
    return os.environ.get("STRICT_FINITE", "0") not in ("", "0")


def _assert_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {where}")


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    """An n-dimensional array that can participate in a gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"
        self.name = name

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    def backward(self, grad=None):
        backward(self, grad)

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def transpose(self, a, b):
        return swapaxes(self, a, b)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return tabs(self)

    def relu(self):
        return relu(self)


ArrayLike = Union[Tensor, np.ndarray, float, int, Sequence]


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype), dtype=like.dtype)


def _result(data, parents, backward_fn, op):
    """Wrap ``data`` as the output of an op and record it on the tape."""
    data = np.asarray(data)
    if _strict_finite():
        _assert_finite(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ------------------------------------------------------------------ the tape
class GradTape:
    """Topologically ordered record of the operations that produced a tensor.

    Each record precedes every record that consumes it, so iterating in
    reverse visits consumers before producers.
    """

    def __init__(self, records):
        self.records = records

    @classmethod
    def from_output(cls, output: Tensor):
        order = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def leaves(self):
        return [t for t in self.records if t.is_leaf]


def backward(loss: Tensor, grad=None):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if grad is None:
        if loss.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    strict = _strict_finite()
    tape = GradTape.from_output(loss)
    grads = {id(loss): grad}
    for node in reversed(tape.records):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if strict:
                _assert_finite(pg, f"backward of {node._op}")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ----------------------------------------------------------- elementwise ops
def add(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), bw, "mul")


def div(a, b):
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * ad / bd, bd.shape)

    return _result(ad / bd, (a, b), bw, "div")


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent):
    if isinstance(exponent, Tensor):
        raise UsageError("only scalar exponents are supported")
    p = float(exponent)
    ad = a.data

    def bw(g):
        return (g * p * ad ** (p - 1.0),)

    return _result(ad ** p, (a,), bw, "pow")


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a):
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tabs(a):
    ad = a.data
    return _result(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


def relu(a):
    ad = a.data
    mask = ad > 0
    return _result(np.where(mask, ad, 0).astype(ad.dtype), (a,), lambda g: (g * mask,), "relu")


_SQRT_HALF = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    out = (x * cdf).astype(x.dtype)

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return ((g * (cdf + x * pdf)).astype(x.dtype),)

    return _result(out, (a,), bw, "gelu")


# ---------------------------------------------------------------- reductions
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = prod(a.shape[ax] for ax in axes)
    return tsum(a, axes, keepdims) * (1.0 / count)


# ------------------------------------------------------------- shape ops
def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    if -1 not in shape and prod(shape) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} ({a.size} elements) into {shape}")
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from exc
    orig = a.shape
    return _result(out, (a,), lambda g: (g.reshape(orig),), "reshape")


def permute(a, axes):
    axes = tuple(int(ax) % a.ndim for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permutation {axes} is not a bijection of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _result(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),), "permute")


def swapaxes(a, ax1, ax2):
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return permute(a, axes)


def concat(tensors, axis=1):
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise DimensionError(f"concat shapes disagree off axis {axis}: {ref} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(out, tensors, bw, "concat")


def getitem(a, index):
    shape = a.shape
    out = a.data[index]

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in parts)

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out), (a,), bw, "getitem")


def take(a, indices, axis):
    """Gather ``indices`` along ``axis``; duplicate indices accumulate gradient."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _result(np.take(a.data, indices, axis=axis), (a,), bw, "take")


def take_along_axis(a, indices, axis):
    """Gather with per-position indices; ``indices`` must be a permutation along ``axis``."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, np.broadcast_to(indices, g.shape), g, axis)
        return (full,)

    return _result(np.take_along_axis(a.data, indices, axis), (a,), bw, "take_along_axis")


def pad2d(x, pad, mode="constant"):
    """Pad the two trailing axes by ``pad`` (an int, or ``(before, after)``) on each side.

    ``mode`` is ``"constant"`` (zeros), ``"edge"``, ``"reflect"`` or ``"symmetric"``
    with numpy's meaning of those names.
    """
    before, after = _pads(pad)
    if before == after == 0:
        return x
    h, w = x.shape[-2:]
    if mode == "constant":
        width = [(0, 0)] * (x.ndim - 2) + [(before, after), (before, after)]
        out = np.pad(x.data, width)
        return _result(out, (x,), lambda g: (g[..., before:before + h, before:before + w].copy(),), "pad")
    if mode == "reflect" and max(before, after) >= min(h, w):
        raise DimensionError(f"reflect padding {pad} needs spatial extents > {max(before, after)}, got {h}x{w}")
    rows = np.pad(np.arange(h), (before, after), mode=mode)
    cols = np.pad(np.arange(w), (before, after), mode=mode)
    return take(take(x, rows, -2), cols, -1)


# ------------------------------------------------------------ linear algebra
def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise DimensionError(f"matmul batch extents disagree: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(np.matmul(ad, bd), (a, b), bw, "matmul")


def softmax(a, axis=-1):
    """Softmax along ``axis`` with max-subtraction."""
    if a.ndim == 0 or a.shape[axis] < 1:
        raise DimensionError(f"softmax over an empty axis (shape {a.shape})")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), bw, "softmax")


def softmax_lastdim(a):
    return softmax(a, axis=-1)


def layernorm(x, gamma, beta, eps=1e-5):
    """Normalize the channel axis (axis 1) independently at every other position."""
    if x.ndim < 2:
        raise DimensionError(f"layernorm expects (N, C, ...) input, got {x.shape}")
    c = x.shape[1]
    if c < 2:
        raise DimensionError("layernorm needs at least 2 channels")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layernorm affine params must have shape ({c},), got {gamma.shape} and {beta.shape}"
        )
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data.reshape(bshape)
    out = xhat * gd + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def bw(g):
        gx_hat = g * gd
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _result(out, (x, gamma, beta), bw, "layernorm")


# --------------------------------------------------------------- convolutions
def _pads(padding):
    if isinstance(padding, int):
        return padding, padding
    before, after = padding
    return int(before), int(after)


def _out_extent(n, k, stride, before, after, axis_name):
    span = n + before + after - k
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"conv output {axis_name} is not integral: ({n} + {before} + {after} - {k}) / {stride} + 1"
        )
    return span // stride + 1


def _im2col(xp, k, stride, ho, wo):
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)


def _col2im(cols, shape_p, k, stride, ho, wo):
    n, c = shape_p[:2]
    cols = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros(shape_p, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return out


def _check_conv_args(x, w, groups_ok=True):
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv expects 4-D input and weight, got {x.shape} and {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ConfigurationError(f"only square kernels are supported, got {w.shape[2:]}")


def conv2d(x, w, bias=None, stride=1, padding=0):
    """Cross-correlate ``x`` (N, C, H, W) with ``w`` (F, C, k, k).

    ``padding`` is an int or a ``(before, after)`` pair applied to both
    spatial axes. The output extent must be integral; there is no flooring.
    """
    _check_conv_args(x, w)
    n, c, h, wd = x.shape
    f, cw, k, _ = w.shape
    if cw != c:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, weight {w.shape}")
    if bias is not None and bias.shape != (f,):
        raise DimensionError(f"conv2d bias must have shape ({f},), got {bias.shape}")
    pb, pa = _pads(padding)
    ho = _out_extent(h, k, stride, pb, pa, "height")
    wo = _out_extent(wd, k, stride, pb, pa, "width")
    xd, wmat = x.data, w.data.reshape(f, c * k * k)

    if k == 1 and stride == 1 and pb == pa == 0:
        cols = xd.reshape(n, c, h * wd)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (pb, pa), (pb, pa))) if (pb or pa) else xd
        cols = _im2col(xp, k, stride, ho, wo)
    out = np.matmul(wmat, cols).reshape(n, f, ho, wo)
    if bias is not None:
        out += bias.data.reshape(1, f, 1, 1)
    shape_p = (n, c, h + pb + pa, wd + pb + pa)

    def bw(g):
        g2 = g.reshape(n, f, ho * wo)
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            if k == 1 and stride == 1 and pb == pa == 0:
                gx = gcols.reshape(x.shape)
            else:
                gxp = _col2im(gcols, shape_p, k, stride, ho, wo)
                gx = gxp[:, :, pb : pb + h, pb : pb + wd]
                gx = np.ascontiguousarray(gx)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if bias is None else (x, w, bias)
    return _result(out, parents, bw, "conv2d")


def pointwise_conv(x, w):
    """Bias-free 1x1 convolution whose per-pixel result does not depend on pixel position.

    Uses a plain per-element contraction instead of blocked GEMM, so
    permuting pixels permutes the output bit-exactly.
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (1, 1) or w.shape[1] != x.shape[1]:
        raise DimensionError(f"pointwise_conv needs (N, C, H, W) and (F, C, 1, 1), got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    f = w.shape[0]
    wmat = w.data.reshape(f, c)
    xd = x.data
    out = np.einsum("fc,nchw->nfhw", wmat, xd)

    def bw(g):
        g2 = g.reshape(n, f, h * wd)
        gw = np.tensordot(g2, xd.reshape(n, c, h * wd), axes=([0, 2], [0, 2])).reshape(w.shape)
        gx = np.matmul(wmat.T, g2).reshape(x.shape) if x.requires_grad else None
        return gx, gw

    return _result(out, (x, w), bw, "pointwise_conv")


def transpose_padding(k):
    """Padding of the stride-2 conv2d whose adjoint is ``conv_transpose2d`` with kernel ``k``."""
    p = (k - 1) // 2
    return p, p - 1


def conv_transpose2d(x, w, bias=None, stride=2):
    """Adjoint of a stride-2 ``conv2d``; doubles both spatial extents.

    ``w`` has shape (F, C, k, k) where F is the input channel count, so the
    same weight tensor serves ``conv2d`` (C -> F) and this op (F -> C).
    """
    _check_conv_args(x, w)
    if stride != 2:
        raise ConfigurationError(f"conv_transpose2d supports stride 2 only, got {stride}")
    n, f, h, wd = x.shape
    fw, c, k, _ = w.shape
    if k % 2 == 0 or k < 3:
        raise ConfigurationError(f"conv_transpose2d needs an odd kernel >= 3, got {k}")
    if fw != f:
        raise DimensionError(f"conv_transpose2d channel mismatch: input {x.shape}, weight {w.shape}")
    if bias is not None and bias.shape != (c,):
        raise DimensionError(f"conv_transpose2d bias must have shape ({c},), got {bias.shape}")
    pb, pa = transpose_padding(k)
    H, W = 2 * h, 2 * wd
    shape_p = (n, c, H + pb + pa, W + pb + pa)
    wmat = w.data.reshape(f, c * k * k)
    xd = x.data.reshape(n, f, h * wd)
    cols = np.matmul(wmat.T, xd)
    out = _col2im(cols, shape_p, k, stride, h, wd)[:, :, pb : pb + H, pb : pb + W]
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data.reshape(1, c, 1, 1)

    def bw(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pb, pa), (pb, pa)))
        gcols = _im2col(gp, k, stride, h, wd)
        gw = np.tensordot(xd, gcols, axes=([0, 2], [0, 2])).reshape(w.shape)
        gx = np.matmul(wmat, gcols).reshape(x.shape) if x.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if bias is None else (x, w, bias)
    return _result(out, parents, bw, "conv_transpose2d")


def depthwise_conv2d(x, w, bias=None):
    """Per-channel 'same' convolution of ``x`` (N, C, H, W) with ``w`` (C, 1, k, k)."""
    _check_conv_args(x, w)
    n, c, h, wd = x.shape
    if w.shape[0] != c or w.shape[1] != 1:
        raise DimensionError(f"depthwise weight must be ({c}, 1, k, k), got {w.shape}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ConfigurationError(f"depthwise kernel must be odd, got {k}")
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    wd_ = w.data[:, 0]
    out = np.zeros(x.shape, dtype=np.result_type(x.data, w.data))
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i : i + h, j : j + wd] * wd_[:, i, j].reshape(1, c, 1, 1)
    if bias is not None:
        out += bias.data.reshape(1, c, 1, 1)

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + h, j : j + wd] += g * wd_[:, i, j].reshape(1, c, 1, 1)
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, xp[:, :, i : i + h, j : j + wd])
        gx = np.ascontiguousarray(gxp[:, :, p : p + h, p : p + wd])
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if bias is None else (x, w, bias)
    return _result(out, parents, bw, "depthwise_conv2d")


def avg_pool2d(x, k=2):
    n, c, h, w = x.shape
    if h % k or w % k:
        raise DimensionError(f"avg_pool2d({k}) needs extents divisible by {k}, got {h}x{w}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def bw(g):
        g = np.repeat(np.repeat(g, k, axis=2), k, axis=3)
        return (g / (k * k),)

    return _result(out, (x,), bw, "avg_pool2d")
