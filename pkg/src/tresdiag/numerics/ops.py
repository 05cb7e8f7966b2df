"""Differentiable primitives.

Convolution follows the cross-correlation convention (no kernel flip), as
in every mainstream deep-learning library.  Image tensors are laid out
``(N, C, H, W)``; the single-image forms ``(C, H, W)`` are accepted by
:func:`conv2d` and :func:`maxpool2d` and returned in the same rank.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, ShapeError
from .graph import Tensor, apply, as_tensor
from .rng import Rng


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def square(x) -> Tensor:
    x = as_tensor(x)
    return apply("square", x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return apply("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


# --- reductions and reshaping --------------------------------------------------

def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return apply("sum", out, (x,), vjp)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    out = x.data.mean(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return apply("mean", out, (x,), vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return apply("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def take(x, index, axis=-1) -> Tensor:
    """Select one position along ``axis`` (the axis is dropped)."""
    x = as_tensor(x)
    out = np.take(x.data, index, axis=axis)

    def vjp(g):
        gx = np.zeros(x.shape)
        sl = [slice(None)] * x.data.ndim
        sl[axis] = index
        gx[tuple(sl)] = g
        return (gx,)

    return apply("take", out, (x,), vjp)


# --- softmax family ----------------------------------------------------------

def log_softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    if x.data.size == 0:
        raise ShapeError("softmax of an empty tensor", x.shape)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return apply("log_softmax", out, (x,),
                 lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    if x.data.size == 0:
        raise ShapeError("softmax of an empty tensor", x.shape)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)
    return apply("softmax", p, (x,),
                 lambda g: (p * (g - (g * p).sum(axis=axis, keepdims=True)),))


# --- layers --------------------------------------------------------------------

def dense(x, weights, bias=None) -> Tensor:
    """``x @ weights + bias`` with ``x`` of shape (N, D) or (D,)."""
    x, w = as_tensor(x), as_tensor(weights)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError("dense: input width does not match weight rows", x.shape, w.shape)
    out = x.data @ w.data
    inputs = [x, w]
    if bias is not None:
        b = as_tensor(bias)
        out = out + b.data
        inputs.append(b)

    def vjp(g):
        if x.data.ndim == 1:
            gw = np.outer(x.data, g)
        else:
            gw = x.data.T @ g
        grads = [g @ w.data.T, gw]
        if bias is not None:
            grads.append(g if g.ndim == 1 else g.sum(axis=0))
        return grads

    return apply("dense", out, inputs, vjp)


def conv2d(x, kernels, stride=1, padding=0, bias=None) -> Tensor:
    """2-D cross-correlation.

    ``x`` is (Cin, H, W) or (N, Cin, H, W); ``kernels`` is (Cout, Cin, kh, kw).
    Output spatial size is ``floor((H + 2*pad - kh) / stride) + 1`` per axis.
    """
    x, w = as_tensor(x), as_tensor(kernels)
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects (N,Cin,H,W) input and (Cout,Cin,kh,kw) kernels",
                         x.shape, w.shape)
    n, cin, h, wd = xd.shape
    cout, kcin, kh, kw = w.shape
    if cin != kcin:
        raise ShapeError("conv2d: input channels do not match kernel channels", x.shape, w.shape)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if kh > h + 2 * ph or kw > wd + 2 * pw:
        raise ShapeError("conv2d: kernel larger than padded input", x.shape, w.shape)
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]  # N,C,ho,wo,kh,kw
    # im2col matrix, kept for the weight gradient
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = (cols @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    inputs = [x, w]
    if bias is not None:
        b = as_tensor(bias)
        out = out + b.data[None, :, None, None]
        inputs.append(b)
    out = np.ascontiguousarray(out)
    if single:
        out = out[0]

    def vjp(g):
        g4 = g[None] if single else g
        g2 = g4.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (g2.T @ cols).reshape(w.shape)
        dcols = (g2 @ wmat).reshape(n, ho, wo, cin, kh, kw)
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += dcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, ph:ph + h, pw:pw + wd]
        if single:
            gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return grads

    return apply("conv2d", out, inputs, vjp)


def maxpool2d(x, window, stride=None) -> Tensor:
    """Max pooling with recorded argmax; ties resolve to the first position."""
    x = as_tensor(x)
    kh, kw = _pair(window)
    sh, sw = _pair(stride if stride is not None else (kh, kw))
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    n, c, h, wd = xd.shape
    if kh > h or kw > wd:
        raise ShapeError("maxpool2d: window larger than input", x.shape, (kh, kw))
    ho = (h - kh) // sh + 1
    wo = (wd - kw) // sw + 1
    win = sliding_window_view(xd, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    flat = win.reshape(n, c, ho, wo, kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    if single:
        out = out[0]

    def vjp(g):
        g4 = g[None] if single else g
        gx = np.zeros(xd.shape)
        for o in range(kh * kw):
            i, j = divmod(o, kw)
            gx[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += np.where(arg == o, g4, 0.0)
        return (gx[0] if single else gx,)

    return apply("maxpool2d", out, (x,), vjp)


def dropout(x, rate: float, rng: Rng | None, training: bool) -> Tensor:
    """Inverted dropout: kept activations are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(x.shape) >= rate) * scale
    return apply("dropout", x.data * mask, (x,), lambda g: (g * mask,))
