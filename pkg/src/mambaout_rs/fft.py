"""Complex FFT of arbitrary length along the last axis.

Lengths whose prime factors are all in {2, 3, 5, 7} use a recursive
decimation-in-time mixed-radix transform, vectorised over every leading
axis. Any other length goes through Bluestein's chirp-z identity with a
7-smooth convolution length. Transforms are unnormalised; callers scale.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

RADICES = (4, 2, 3, 5, 7)
FORWARD, INVERSE = -1, 1


def _is_smooth(n: int) -> bool:
    for p in (2, 3, 5, 7):
        while n % p == 0:
            n //= p
    return n == 1


def _next_smooth(n: int) -> int:
    while not _is_smooth(n):
        n += 1
    return n


@lru_cache(maxsize=None)
def _dft_matrix(n: int, sign: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * (np.outer(k, k) % n) / n)


@lru_cache(maxsize=None)
def _twiddles(n: int, p: int, sign: int) -> np.ndarray:
    m = n // p
    return np.exp(sign * 2j * np.pi * (np.outer(np.arange(p), np.arange(m)) % n) / n)


def _mixed_radix(x: np.ndarray, sign: int) -> np.ndarray:
    n = x.shape[-1]
    if n <= 7:
        return x @ _dft_matrix(n, sign).T.astype(x.dtype, copy=False)
    p = next(r for r in RADICES if n % r == 0)
    m = n // p
    lead = x.shape[:-1]
    # sub[..., r, :] = DFT_m(x[..., r::p])
    sub = _mixed_radix(x.reshape(lead + (m, p)).swapaxes(-1, -2), sign)
    sub = sub * _twiddles(n, p, sign).astype(x.dtype, copy=False)
    # X[k1 + m*k2] = sum_r W_p^{r*k2} sub[r, k1]
    out = np.matmul(_dft_matrix(p, sign).astype(x.dtype, copy=False), sub)
    return out.reshape(lead + (n,))


@lru_cache(maxsize=None)
def _chirp(n: int, sign: int):
    k = np.arange(n)
    # k^2 mod 2n keeps the phase argument small for large n
    w = np.exp(sign * 1j * np.pi * ((k * k) % (2 * n)) / n)
    m = _next_smooth(2 * n - 1)
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(w)
    if n > 1:
        b[m - n + 1:] = np.conj(w[1:])[::-1]
    return w, m, _mixed_radix(b, FORWARD)


def _bluestein(x: np.ndarray, sign: int) -> np.ndarray:
    n = x.shape[-1]
    w, m, B = _chirp(n, sign)
    w = w.astype(x.dtype, copy=False)
    a = np.zeros(x.shape[:-1] + (m,), dtype=x.dtype)
    a[..., :n] = x * w
    A = _mixed_radix(a, FORWARD)
    c = _mixed_radix(A * B.astype(x.dtype, copy=False), INVERSE) / m
    return c[..., :n] * w


def fft1d(v, direction: str = "forward", axis: int = -1) -> np.ndarray:
    """Unnormalised DFT (``forward``) or IDFT (``inverse``) along ``axis``."""
    sign = {"forward": FORWARD, "inverse": INVERSE}[direction]
    x = np.asarray(v)
    if x.dtype == np.complex64 or x.dtype == np.float32:
        x = x.astype(np.complex64)
    else:
        x = x.astype(np.complex128)
    n = x.shape[axis]
    if n == 0:
        raise ValueError("cannot transform an empty axis")
    x = np.moveaxis(x, axis, -1)
    if n == 1:
        y = x.copy()
    elif _is_smooth(n):
        y = _mixed_radix(x, sign)
    else:
        y = _bluestein(x, sign)
    return np.ascontiguousarray(np.moveaxis(y, -1, axis))


def dft_direct(v, direction: str = "forward") -> np.ndarray:
    """O(N^2) reference transform of a 1D vector, summed in extended precision."""
    sign = {"forward": -1, "inverse": 1}[direction]
    x = np.asarray(v, dtype=np.complex128)
    n = x.size
    k = np.arange(n)
    ang = 2.0 * np.pi * ((np.outer(k, k) % n).astype(np.longdouble)) / n
    mat = np.cos(ang) + sign * 1j * np.sin(ang)
    return (mat.astype(np.clongdouble) @ x.astype(np.clongdouble)).astype(np.complex128)
