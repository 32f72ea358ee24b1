"""Layers and composite blocks: Gated CNN, Fourier gate block, stem, downsample, head."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import functional as F
from .spectral import FourierFilterGate
from .tensor import ConfigurationError, DimensionError, Module, Parameter, Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by redrawing."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng, dtype=np.float32):
        super().__init__()
        self.weight = Parameter(trunc_normal(rng, (cin, cout), dtype=dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.layernorm(x, self.weight, self.bias, self.eps)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int, rng, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.weight = Parameter(trunc_normal(rng, (k, k, cin, cout), dtype=dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride)


class DWConv2d(Module):
    def __init__(self, dim: int, k: int, rng, dtype=np.float32):
        super().__init__()
        if k % 2 == 0:
            raise ConfigurationError(f"depthwise kernel size must be odd, got {k}")
        self.weight = Parameter(trunc_normal(rng, (k, k, dim), dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.dwconv2d(x, self.weight, self.bias)


def droppath(branch: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Per-sample stochastic depth; survivors are rescaled by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"droppath rate must lie in [0, 1), got {p}")
    if p == 0.0 or not training:
        return branch
    keep = 1.0 - p
    mask = (rng.random(branch.shape[0]) < keep).astype(branch.dtype) / branch.dtype.type(keep)
    return F.mul(branch, mask.reshape((-1,) + (1,) * (branch.ndim - 1)))


@dataclass
class GatedCnnBlockCfg:
    dim: int
    expansion_ratio: float = 8 / 3
    conv_ratio: float = 1.0
    kernel_size: int = 7
    eps: float = 1e-6

    @property
    def hidden(self) -> int:
        return int(round(self.expansion_ratio * self.dim))

    @property
    def conv_channels(self) -> int:
        return int(round(self.conv_ratio * self.dim))

    def __post_init__(self):
        if self.conv_channels > self.hidden:
            raise ConfigurationError(
                f"conv channels {self.conv_channels} exceed hidden width {self.hidden}")
        if self.kernel_size % 2 == 0:
            raise ConfigurationError(f"depthwise kernel size must be odd, got {self.kernel_size}")


class GatedCNNBlock(Module):
    """norm -> fc1 (2h) -> split gate/identity/conv -> dwconv -> sigmoid gating -> GELU -> fc2, plus residual."""

    kind = "GatedCNN"

    def __init__(self, cfg: GatedCnnBlockCfg, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        h, cc = cfg.hidden, cfg.conv_channels
        self.split = (h, h - cc, cc)
        self.norm = LayerNorm(cfg.dim, cfg.eps, dtype)
        self.fc1 = Linear(cfg.dim, 2 * h, rng, dtype)
        self.conv = DWConv2d(cc, cfg.kernel_size, rng, dtype)
        self.fc2 = Linear(h, cfg.dim, rng, dtype)

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        if x.shape[-1] != self.cfg.dim:
            raise DimensionError(f"GatedCNN block of width {self.cfg.dim} got input shape {x.shape}")
        u = self.fc1(self.norm(x))
        g, i, c = F.split_channels(u, self.split)
        c = self.conv(c)
        z = F.mul(F.sigmoid(g), F.concat_channels([i, c]))
        y = self.fc2(F.gelu(z))
        return F.add(x, y)


@dataclass
class FgbCfg:
    dim: int
    resolution: tuple
    mlp_ratio: int = 4
    droppath: float = 0.0
    eps: float = 1e-6
    gate_init_std: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.droppath < 1.0:
            raise ConfigurationError(f"droppath rate must lie in [0, 1), got {self.droppath}")


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng, dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class FourierGateBlock(Module):
    kind = "FGB"

    def __init__(self, cfg: FgbCfg, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.norm1 = LayerNorm(cfg.dim, cfg.eps, dtype)
        self.ffg = FourierFilterGate(cfg.dim, cfg.resolution, rng, dtype, cfg.gate_init_std)
        self.norm2 = LayerNorm(cfg.dim, cfg.eps, dtype)
        self.mlp = MLP(cfg.dim, cfg.mlp_ratio * cfg.dim, rng, dtype)

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        p = self.cfg.droppath
        z1 = self.ffg(self.norm1(x))
        x1 = F.add(x, droppath(z1, p, training, rng))
        z2 = self.mlp(self.norm2(x1))
        return F.add(x1, droppath(z2, p, training, rng))


class Stem(Module):
    """conv3x3/2 -> norm -> GELU -> conv3x3/2: a x4 spatial reduction."""

    def __init__(self, in_channels: int, dim: int, input_size: int, rng, dtype=np.float32, eps=1e-6):
        super().__init__()
        self.input_size = input_size
        self.conv1 = Conv2d(in_channels, dim // 2, 3, 2, rng, dtype)
        self.norm = LayerNorm(dim // 2, eps, dtype)
        self.conv2 = Conv2d(dim // 2, dim, 3, 2, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        S = self.input_size
        if x.ndim != 4 or x.shape[1:3] != (S, S):
            raise ConfigurationError(f"stem configured for {S}x{S} input, got shape {x.shape}")
        return self.conv2(F.gelu(self.norm(self.conv1(x))))


class Downsample(Module):
    def __init__(self, cin: int, cout: int, rng, dtype=np.float32, eps=1e-6):
        super().__init__()
        self.norm = LayerNorm(cin, eps, dtype)
        self.conv = Conv2d(cin, cout, 3, 2, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise DimensionError(f"downsample needs even spatial dims, got {x.shape[1:3]}")
        return self.conv(self.norm(x))


class Head(Module):
    """norm -> single linear classifier on pooled (B,1,1,C) features."""

    def __init__(self, dim: int, num_classes: int, rng, dtype=np.float32, eps=1e-6):
        super().__init__()
        self.norm = LayerNorm(dim, eps, dtype)
        self.fc = Linear(dim, num_classes, rng, dtype)

    def __call__(self, pooled: Tensor) -> Tensor:
        y = self.fc(self.norm(pooled))
        return F.reshape(y, (pooled.shape[0], -1))
