"""Real 2D FFT with orthonormal scaling and the Fourier filter gate.

Spatial tensors are channels-last ``(B, H, W, C)``; spectra use the
half-spectrum layout ``(B, C, H, W//2 + 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fft import fft1d
from .tensor import ConfigurationError, DimensionError, Module, Parameter, Tensor, record


@dataclass
class HalfSpectrum:
    data: np.ndarray  # complex (B, C, H, Wf)
    original_W: int

    def __post_init__(self):
        wf = self.data.shape[-1]
        if wf != self.original_W // 2 + 1:
            raise DimensionError(
                f"half-spectrum width {wf} inconsistent with original width {self.original_W}")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def H(self) -> int:
        return self.data.shape[2]


def column_weights(W: int, dtype=np.float64) -> np.ndarray:
    """How many full-spectrum columns each retained column stands for."""
    wf = W // 2 + 1
    c = np.full(wf, 2.0, dtype=dtype)
    c[0] = 1.0
    if W % 2 == 0:
        c[-1] = 1.0
    return c


def _raw(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def rfft2(x) -> HalfSpectrum:
    """Orthonormal 2D DFT over (H, W) of a real ``(B, H, W, C)`` array."""
    d = _raw(x)
    if d.ndim != 4:
        raise DimensionError(f"rfft2 expects (B,H,W,C), got shape {d.shape}")
    B, H, W, C = d.shape
    planes = np.ascontiguousarray(d.transpose(0, 3, 1, 2))
    spec = fft1d(planes, "forward", axis=3)[..., : W // 2 + 1]
    spec = fft1d(spec, "forward", axis=2)
    spec *= spec.real.dtype.type(1.0 / np.sqrt(H * W))
    return HalfSpectrum(spec, W)


def _irfft2_complex(X: HalfSpectrum, out_H: int, out_W: int) -> np.ndarray:
    d = X.data
    if d.ndim != 4 or d.shape[2] != out_H or out_W != X.original_W or d.shape[3] != out_W // 2 + 1:
        raise DimensionError(
            f"irfft2: spectrum shape {d.shape} (original W {X.original_W}) "
            f"cannot produce a {out_H}x{out_W} field")
    wf = d.shape[3]
    rows = fft1d(d, "inverse", axis=2)
    full = np.empty(d.shape[:3] + (out_W,), dtype=rows.dtype)
    full[..., :wf] = rows
    # Hermitian completion of the dropped columns
    full[..., wf:] = np.conj(rows[..., 1:out_W - wf + 1][..., ::-1])
    out = fft1d(full, "inverse", axis=3)
    out *= out.real.dtype.type(1.0 / np.sqrt(out_H * out_W))
    return out


def irfft2(X: HalfSpectrum, out_H: int, out_W: int) -> np.ndarray:
    """Inverse of :func:`rfft2`; returns a real ``(B, H, W, C)`` array."""
    out = _irfft2_complex(X, out_H, out_W).real
    return np.ascontiguousarray(out.transpose(0, 2, 3, 1))


def _sigmoid(w: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(w))
    return np.where(w >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(w.dtype, copy=False)


def ffg(x: Tensor, w: Tensor, mask_override: Optional[np.ndarray] = None) -> Tensor:
    """``irfft2(rfft2(x) * sigmoid(w))``, differentiable in ``x`` and ``w``.

    ``w`` has shape ``(1, C, H, W//2+1)``. ``mask_override`` replaces the
    sigmoid gate with an explicit mask (no gradient reaches ``w`` then).
    """
    B, H, W, C = x.shape
    gate = _sigmoid(w.data) if mask_override is None else np.asarray(mask_override, dtype=x.dtype)
    X = rfft2(x)
    y = irfft2(HalfSpectrum(X.data * gate, W), H, W).astype(x.dtype, copy=False)
    out = Tensor(y)

    def backward(g):
        G = rfft2(g)
        # the gated transform is self-adjoint, so dx applies the same gate
        gx = irfft2(HalfSpectrum(G.data * gate, W), H, W).astype(x.dtype, copy=False) \
            if x.requires_grad else None
        gw = None
        if w.requires_grad and mask_override is None:
            cw = column_weights(W, x.dtype)
            dgate = (np.conj(G.data) * X.data).real.sum(axis=0, keepdims=True) * cw
            gw = (dgate * gate * (1 - gate)).astype(w.dtype, copy=False)
        return gx, gw

    return record(out, (x, w), backward)


class FourierFilterGate(Module):
    """Learnable sigmoid mask over the half-spectrum at a fixed resolution."""

    def __init__(self, dim: int, resolution: tuple, rng: np.random.Generator,
                 dtype=np.float32, init_std: float = 0.02):
        super().__init__()
        H, W = resolution
        self.dim = dim
        self.resolution = (H, W)
        self.gate = Parameter(
            (init_std * rng.standard_normal((1, dim, H, W // 2 + 1))).astype(dtype))
        # test hook: explicit mask replacing sigmoid(gate); never set during training
        self.mask_override: Optional[np.ndarray] = None

    def gate_values(self) -> np.ndarray:
        return _sigmoid(self.gate.data)[0]

    def __call__(self, x: Tensor) -> Tensor:
        H, W = self.resolution
        if x.ndim != 4 or x.shape[1:] != (H, W, self.dim):
            raise ConfigurationError(
                f"Fourier gate bound to {H}x{W}x{self.dim} received input of shape {x.shape}")
        return ffg(x, self.gate, self.mask_override)
