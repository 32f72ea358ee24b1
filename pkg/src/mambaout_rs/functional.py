"""Differentiable primitives on :class:`~mambaout_rs.tensor.Tensor`.

Each op computes its forward on raw arrays and, when a tape is active and
an input requires a gradient, records a closure producing the input
gradients from the output gradient.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import ConfigurationError, DimensionError, Tensor, record

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = Tensor(a.data + b.data.astype(a.dtype, copy=False))

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    bd = b.data.astype(a.dtype, copy=False)
    out = Tensor(a.data * bd)

    def backward(g):
        ga = _unbroadcast(g * bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record(out, (a, b), backward)


def scale(x: Tensor, s: float) -> Tensor:
    out = Tensor(x.data * x.dtype.type(s))

    def backward(g):
        return (g * x.dtype.type(s),)

    return record(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    out = Tensor(y)

    def backward(g):
        return (g * y * (1 - y),)

    return record(out, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    d = x.data
    cdf = 0.5 * (1.0 + erf(d / d.dtype.type(_SQRT2)))
    out = Tensor(d * cdf)

    def backward(g):
        pdf = np.exp(-0.5 * d * d) * d.dtype.type(_INV_SQRT_2PI)
        return (g * (cdf + d * pdf),)

    return record(out, (x,), backward)


# shape plumbing


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        return (g.reshape(x.shape),)

    return record(out, (x,), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.data[..., start:stop])

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return record(out, (x,), backward)


def split_channels(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if sum(sizes) != x.shape[-1]:
        raise DimensionError(f"split sizes {tuple(sizes)} do not cover {x.shape[-1]} channels")
    parts, start = [], 0
    for n in sizes:
        parts.append(slice_channels(x, start, start + n))
        start += n
    return parts


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    xs = [x for x in xs if x.shape[-1] > 0]
    out = Tensor(np.concatenate([x.data for x in xs], axis=-1))
    bounds = np.cumsum([0] + [x.shape[-1] for x in xs])

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return record(out, tuple(xs), backward)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))

    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return record(out, (x,), backward)


# layers


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    cin, cout = W.shape
    if x.shape[-1] != cin:
        raise DimensionError(f"linear: input shape {x.shape} incompatible with weight shape {W.shape}")
    x2 = x.data.reshape(-1, cin)
    y = x2 @ W.data
    if b is not None:
        y = y + b.data
    out = Tensor(y.reshape(x.shape[:-1] + (cout,)))

    def backward(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ W.data.T).reshape(x.shape) if x.requires_grad else None
        gW = x2.T @ g2 if W.requires_grad else None
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        return gx, gW, gb

    return record(out, (x, W, b), backward)


def _check4(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{op}: expected a (B,H,W,C) tensor, got shape {x.shape}")


def dwconv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 2D cross-correlation, stride 1, zero same-padding."""
    _check4(x, "dwconv2d")
    k = kernel.shape[0]
    if k % 2 == 0 or kernel.shape[1] != k:
        raise ConfigurationError(f"dwconv2d needs an odd square kernel, got {kernel.shape[:2]}")
    B, H, W, C = x.shape
    if kernel.shape[2] != C:
        raise DimensionError(f"dwconv2d: input shape {x.shape} incompatible with kernel shape {kernel.shape}")
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    K = kernel.data
    y = np.zeros_like(x.data)
    for i in range(k):
        for j in range(k):
            y += xp[:, i:i + H, j:j + W, :] * K[i, j]
    if bias is not None:
        y += bias.data
    out = Tensor(y)

    def backward(g):
        gK = np.zeros_like(K) if kernel.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for i in range(k):
            for j in range(k):
                if gK is not None:
                    gK[i, j] = np.einsum("bhwc,bhwc->c", xp[:, i:i + H, j:j + W, :], g)
                if gxp is not None:
                    gxp[:, i:i + H, j:j + W, :] += g * K[i, j]
        gx = gxp[:, p:p + H, p:p + W, :] if gxp is not None else None
        gb = g.sum(axis=(0, 1, 2)) if bias is not None and bias.requires_grad else None
        return gx, gK, gb

    return record(out, (x, kernel, bias), backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Dense cross-correlation with ``k//2`` zero padding; output side ``ceil(H/stride)``."""
    _check4(x, "conv2d")
    k, k2, cin, cout = weight.shape
    if k % 2 == 0 or k2 != k:
        raise ConfigurationError(f"conv2d needs an odd square kernel, got {weight.shape[:2]}")
    B, H, W, C = x.shape
    if C != cin:
        raise DimensionError(f"conv2d: input shape {x.shape} incompatible with weight shape {weight.shape}")
    p, s = k // 2, stride
    Ho, Wo = -(-H // s), -(-W // s)
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s][:, :Ho, :Wo]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, k * k * cin)
    Wm = weight.data.reshape(k * k * cin, cout)
    y = cols @ Wm
    if bias is not None:
        y += bias.data
    out = Tensor(y.reshape(B, Ho, Wo, cout))

    def backward(g):
        g2 = g.reshape(-1, cout)
        gW = (cols.T @ g2).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ Wm.T).reshape(B, Ho, Wo, k, k, cin)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + s * Ho:s, j:j + s * Wo:s, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, p:p + H, p:p + W, :]
        return gx, gW, gb

    return record(out, (x, weight, bias), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise over the channel (last) axis at every site."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + d.dtype.type(eps))
    xhat = xc * rstd
    out = Tensor(xhat * gamma.data + beta.data)

    def backward(g):
        red = tuple(range(d.ndim - 1))
        gg = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gbeta

    return record(out, (x, gamma, beta), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    _check4(x, "global_avg_pool")
    B, H, W, C = x.shape
    out = Tensor(x.data.mean(axis=(1, 2), keepdims=True))

    def backward(g):
        return (np.broadcast_to(g / x.dtype.type(H * W), x.shape).copy(),)

    return record(out, (x,), backward)


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of ``-sum(targets * log_softmax(logits))``.

    ``targets`` are soft labels of shape ``(B, K)``; each row must sum to 1.
    """
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    if logits.ndim != 2 or t.shape != logits.shape:
        raise DimensionError(f"logits shape {logits.shape} vs targets shape {t.shape}")
    rows = t.astype(np.float64).sum(axis=1)
    if not np.allclose(rows, 1.0, atol=1e-5):
        bad = int(np.argmax(np.abs(rows - 1.0)))
        raise ValueError(f"target row {bad} sums to {rows[bad]:.6g}, expected 1")
    t = t.astype(logits.dtype, copy=False)
    B = logits.shape[0]
    lsm = log_softmax(logits.data)
    out = Tensor(np.asarray(-(t * lsm).sum() / B, dtype=logits.dtype))

    def backward(g):
        p = np.exp(lsm)
        return (g * (p * t.sum(axis=1, keepdims=True) - t) / logits.dtype.type(B),)

    return record(out, (logits,), backward)
