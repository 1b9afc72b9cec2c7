"""Differentiable operators over :class:`Tensor`.

Image tensors are NCHW. Every operator returns a new tensor and, when any
input requires grad, records a closure that maps the upstream gradient to
per-input gradients.
"""

from __future__ import annotations

from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import NonFiniteError, ShapeError, Tensor, check_finite

Operand = Union[Tensor, float, int, np.ndarray]

ACTIVATIONS = ("relu", "leaky_relu_0.2", "sigmoid", "tanh", "none")
LEAKY_SLOPE = 0.2


def _as_tensor(x: Operand, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- elementwise arithmetic -------------------------------------------------

def add(a: Operand, b: Operand) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data + b.data, (a, b),
                           lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Operand, b: Operand) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data - b.data, (a, b),
                           lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Operand, b: Operand) -> Tensor:
    """Elementwise product; a single-channel map broadcasts across channels."""
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return Tensor._from_op(ad * bd, (a, b), bw)


def elementwise(a: Operand, b: Operand, kind: str) -> Tensor:
    try:
        fn = {"mul": mul, "add": add, "sub": sub}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(a, b)


def abs_(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return Tensor._from_op(np.abs(x.data), (x,), lambda g: (g * sign,))


def sum_(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor._from_op(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                           lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if x.size == 0:
        raise ShapeError("mean of an empty tensor")
    out = x.data.mean(axis=axis, keepdims=keepdims)
    n = x.size // max(out.size, 1)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).astype(x.dtype, copy=True),)

    return Tensor._from_op(np.asarray(out, dtype=x.dtype), (x,), bw)


# -- activations --------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    # np.maximum keeps NaN visible instead of mapping it to 0
    return Tensor._from_op(np.maximum(x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return Tensor._from_op(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor._from_op(y, (x,), lambda g: (g * y * (1 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * (1 - y * y),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu_0.2":
        return leaky_relu(x, LEAKY_SLOPE)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "none":
        return x
    raise ValueError(f"unknown activation {kind!r}")


# -- losses -------------------------------------------------------------------

def l1_mean(x: Tensor) -> Tensor:
    return mean(abs_(x))


def sq_mean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise ShapeError("sq_mean of an empty tensor")
    d = x.data
    n = d.size
    return Tensor._from_op(np.asarray((d * d).mean(), dtype=x.dtype), (x,),
                           lambda g: (g * (2.0 / n) * d,))


def reduce_loss(x: Tensor, kind: str) -> Tensor:
    if x.size == 0:
        raise ShapeError("cannot reduce an empty tensor")
    if kind == "l1_mean":
        return l1_mean(x)
    if kind == "sq_mean":
        return sq_mean(x)
    raise ValueError(f"unknown loss reduction {kind!r}")


# -- spatial ops ----------------------------------------------------------------

def _require_nchw(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} expects an NCHW tensor, got shape {x.shape}")


def pad2d(x: Tensor, pad: int, mode: str = "zero") -> Tensor:
    """Symmetric spatial padding, ``mode`` in {"zero", "reflect"}."""
    _require_nchw(x, "pad2d")
    if pad == 0:
        return x
    H, W = x.shape[2:]
    if mode == "zero":
        out = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        return Tensor._from_op(out, (x,), lambda g: (g[:, :, pad:pad + H, pad:pad + W],))
    if mode != "reflect":
        raise ValueError(f"unknown padding mode {mode!r}")
    if pad >= H or pad >= W:
        raise ShapeError(f"reflect padding {pad} needs spatial extent > {pad}, got {(H, W)}")
    out = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")

    def bw(g):
        gh = g[:, :, pad:pad + H, :].copy()
        for k in range(1, pad + 1):
            gh[:, :, k, :] += g[:, :, pad - k, :]
            gh[:, :, H - 1 - k, :] += g[:, :, pad + H - 1 + k, :]
        gx = gh[:, :, :, pad:pad + W].copy()
        for k in range(1, pad + 1):
            gx[:, :, :, k] += gh[:, :, :, pad - k]
            gx[:, :, :, W - 1 - k] += gh[:, :, :, pad + W - 1 + k]
        return (gx,)

    return Tensor._from_op(out, (x,), bw)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Patch matrix of shape (C*kh*kw, N*ho*wo); the spatial axis is innermost."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)
    return cols, ho, wo


def _col2im(cols: np.ndarray, out_shape: tuple[int, int, int, int], kh: int, kw: int,
            stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add ``cols`` of shape (C*kh*kw, N*ho*wo) onto an NCHW canvas."""
    n, c = out_shape[:2]
    out = np.zeros(out_shape, dtype=cols.dtype)
    cols = cols.reshape(c, kh, kw, n, ho, wo).transpose(3, 0, 1, 2, 4, 5)
    for ky in range(kh):
        for kx in range(kw):
            out[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += cols[:, :, ky, kx]
    return out


def _to_rows(a: np.ndarray) -> np.ndarray:
    """NCHW -> (C, N*H*W)."""
    n, c = a.shape[:2]
    return a.reshape(n, c, -1)[0] if n == 1 else a.transpose(1, 0, 2, 3).reshape(c, -1)


def _from_rows(m: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    """(C, N*H*W) -> NCHW."""
    c = m.shape[0]
    return m.reshape(c, n, h, w).transpose(1, 0, 2, 3)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding. ``weight`` is [K, C, kh, kw]."""
    _require_nchw(x, "conv2d")
    if weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"weight {weight.shape} does not match input channels {x.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    K, C, kh, kw = weight.shape
    if bias is not None and bias.shape != (K,):
        raise ShapeError(f"bias shape {bias.shape} != ({K},)")
    N, _, H, W = x.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ShapeError(f"kernel {(kh, kw)} larger than padded input {(Hp, Wp)}")
    check_finite(x.data, "conv2d input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    wm = weight.data.reshape(K, -1)
    out = wm @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = _from_rows(out, N, ho, wo)

    def bw(g):
        gm = _to_rows(g)
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = _col2im(wm.T @ gm, (N, C, Hp, Wp), kh, kw, stride, ho, wo)
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(np.ascontiguousarray(out), parents, bw)


def transpose_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2,
                     padding: int = 1, output_padding: int = 1) -> Tensor:
    """Fractionally strided convolution. ``weight`` is [C_in, C_out, kh, kw].

    Output extent is ``(H - 1) * stride - 2 * padding + kh + output_padding``,
    i.e. exactly ``2H`` for the default 3x3 / stride 2 setting.
    """
    _require_nchw(x, "transpose_conv2d")
    if weight.ndim != 4 or weight.shape[0] != x.shape[1]:
        raise ShapeError(f"weight {weight.shape} does not match input channels {x.shape}")
    if output_padding >= stride:
        raise ValueError("output_padding must be smaller than stride")
    Cin, K, kh, kw = weight.shape
    if bias is not None and bias.shape != (K,):
        raise ShapeError(f"bias shape {bias.shape} != ({K},)")
    N, _, H, W = x.shape
    Hf = (H - 1) * stride + kh + output_padding
    Wf = (W - 1) * stride + kw + output_padding
    Ho, Wo = Hf - 2 * padding, Wf - 2 * padding
    check_finite(x.data, "transpose_conv2d input")

    xm = _to_rows(x.data)
    wm = weight.data.reshape(Cin, -1)
    full = _col2im(wm.T @ xm, (N, K, Hf, Wf), kh, kw, stride, H, W)
    out = full[:, :, padding:padding + Ho, padding:padding + Wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def bw(g):
        gfull = np.zeros((N, K, Hf, Wf), dtype=g.dtype)
        gfull[:, :, padding:padding + Ho, padding:padding + Wo] = g
        gcols, h2, w2 = _im2col(gfull, kh, kw, stride)
        assert (h2, w2) == (H, W)
        gx = _from_rows(wm @ gcols, N, H, W) if x.requires_grad else None
        gw = (xm @ gcols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(np.ascontiguousarray(out), parents, bw)


def nearest_upsample2x(x: Tensor) -> Tensor:
    _require_nchw(x, "nearest_upsample2x")
    N, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5)),))


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) standardization without affine parameters."""
    _require_nchw(x, "instance_norm")
    d = x.data
    mu = d.mean(axis=(2, 3), keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return Tensor._from_op(xhat.astype(x.dtype, copy=False), (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    _require_nchw(x, "global_avg_pool")
    return mean(x, axis=(2, 3))


__all__ = [
    "ACTIVATIONS", "LEAKY_SLOPE", "NonFiniteError", "abs_", "activation", "add", "conv2d",
    "elementwise", "global_avg_pool", "instance_norm", "l1_mean", "leaky_relu", "mean", "mul",
    "nearest_upsample2x", "pad2d", "reduce_loss", "relu", "sigmoid", "sq_mean", "sub", "sum_",
    "tanh", "transpose_conv2d",
]
