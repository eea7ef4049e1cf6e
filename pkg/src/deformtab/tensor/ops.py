"""Differentiable operators.

Feature maps use the ``(N, C, H, W)`` layout.  Convolutions are stride 1
with zero padding only.  Elementwise binary operators follow numpy
broadcasting; gradients are summed back onto the broadcast axes.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidInputError, ShapeError
from .core import Tensor, as_tensor

__all__ = [
    "add", "sub", "mul", "hadamard", "div", "neg", "square", "sqrt", "exp", "log",
    "sigmoid", "relu", "clamp", "sum", "mean", "reshape", "broadcast_to",
    "concat_channels", "pad_edge", "conv2d", "softmax_channels", "instance_norm",
    "global_avg_pool", "linear", "inject_fault", "FAULTS",
]

# Names of deliberately broken backward passes, for fault-injection tests.
FAULTS: set[str] = set()


@contextlib.contextmanager
def inject_fault(name: str):
    FAULTS.add(name)
    try:
        yield
    finally:
        FAULTS.discard(name)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return Tensor._result(a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return Tensor._result(a.data - b.data, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return Tensor._result(a.data * b.data, (a, b),
                          lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


hadamard = mul


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return Tensor._result(out, (a, b),
                          lambda g: (_unbroadcast(g / b.data, a.shape),
                                     _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(a.data * a.data, (a,), lambda g: (2 * a.data * g,))


def sqrt(a) -> Tensor:
    """Square root; the gradient at exactly 0 is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1)
        return (np.where(out > 0, g / (2 * safe), 0),)

    return Tensor._result(out, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    out = np.where(x >= 0, 1 / (1 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1 + np.exp(-np.abs(x))))
    out = out.astype(x.dtype)
    return Tensor._result(out, (a,), lambda g: (g * out * (1 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return Tensor._result(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,))


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip to ``[lo, hi]``; values clipped away receive no gradient."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    passed = out == a.data
    return Tensor._result(out, (a,), lambda g: (g * passed,))


# -- reductions and shape -------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    if count == 0:
        raise InvalidInputError("mean over an empty extent")
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return Tensor._result(out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return Tensor._result(out, (a,), lambda g: (g.reshape(a.shape),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} to {tuple(shape)}") from None
    return Tensor._result(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat_channels(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: shape {t.shape} incompatible with {ref}")
    sizes = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=1)
    return Tensor._result(out, tensors, lambda g: tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])))


# -- feature-map operators --------------------------------------------------------


def pad_edge(x, padding) -> Tensor:
    """Pad H and W by repeating the border values."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pad_edge expects (N, C, H, W), got {x.shape}")
    ph, pw = _pair(padding)
    h, w = x.shape[2:]
    if h < 1 or w < 1:
        raise ShapeError(f"pad_edge needs a non-empty spatial extent, got {x.shape}")
    out = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode="edge")
    rows = np.clip(np.arange(h + 2 * ph) - ph, 0, h - 1)
    cols = np.clip(np.arange(w + 2 * pw) - pw, 0, w - 1)

    def backward(g):
        gr = np.zeros(g.shape[:2] + (h, g.shape[3]), dtype=g.dtype)
        np.add.at(gr, (slice(None), slice(None), rows), g)
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), slice(None), cols), gr)
        return (gx,)

    return Tensor._result(out, (x,), backward)


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x, weight, bias=None, padding=(0, 0), groups=1) -> Tensor:
    """Stride-1 cross-correlation with zero padding.

    ``x`` is ``(N, C, H, W)``, ``weight`` is ``(O, C // groups, kh, kw)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    ph, pw = _pair(padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if groups < 1 or c % groups or o % groups or cg * groups != c:
        raise ShapeError(f"conv2d: input {x.shape} and weight {weight.shape} do not fit groups={groups}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
    ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input for {x.shape}")
    og = o // groups

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # N, C, Ho, Wo, kh, kw
    cols = []
    out = np.empty((n, o, ho, wo), dtype=np.result_type(x.dtype, weight.dtype))
    for gi in range(groups):
        xg = win[:, gi * cg:(gi + 1) * cg].transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cg * kh * kw)
        wg = weight.data[gi * og:(gi + 1) * og].reshape(og, cg * kh * kw)
        out[:, gi * og:(gi + 1) * og] = (xg @ wg.T).reshape(n, ho, wo, og).transpose(0, 3, 1, 2)
        cols.append(xg)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(weight.data)
        for gi in range(groups):
            dg = g[:, gi * og:(gi + 1) * og].transpose(0, 2, 3, 1).reshape(n * ho * wo, og)
            wg = weight.data[gi * og:(gi + 1) * og].reshape(og, cg * kh * kw)
            dw[gi * og:(gi + 1) * og] = (dg.T @ cols[gi]).reshape(og, cg, kh, kw)
            dcols = (dg @ wg).reshape(n, ho, wo, cg, kh, kw)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, gi * cg:(gi + 1) * cg, i:i + ho, j:j + wo] += dcols[..., i, j].transpose(0, 3, 1, 2)
        if "conv_backward" in FAULTS:
            dw = dw * 1.01
        dx = dxp[:, :, ph:ph + h, pw:pw + w]
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward)


def softmax_channels(x) -> Tensor:
    """Softmax across axis 1 at every spatial position."""
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[1] < 1:
        raise ShapeError(f"softmax_channels needs a channel axis, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return Tensor._result(out, (x,), backward)


def instance_norm(x, eps=1e-5) -> Tensor:
    """Per-sample, per-channel standardization over H and W, no affine terms."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"instance_norm expects (N, C, H, W), got {x.shape}")
    if x.shape[2] * x.shape[3] < 1:
        raise ShapeError("instance_norm needs a non-empty spatial extent")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = centered * inv

    def backward(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gy = (g * out).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - out * gy),)

    return Tensor._result(out, (x,), backward)


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (N, C, H, W), got {x.shape}")
    return mean(x, axis=(2, 3), keepdims=True)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape ``(N, in)`` and ``weight`` of ``(out, in)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward)
