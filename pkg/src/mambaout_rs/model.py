"""Four-stage hybrid backbone: Gated CNN / Fourier gate / Fourier gate / Gated CNN."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import functional as F
from .blocks import (Downsample, FgbCfg, FourierGateBlock, GatedCNNBlock, GatedCnnBlockCfg,
                     Head, LayerNorm, Stem)
from .tensor import ConfigurationError, Module, NumericalError, Tensor


@dataclass(frozen=True)
class VariantSpec:
    name: str
    depths: tuple
    dims: tuple


VARIANTS = {
    "femto": VariantSpec("femto", (3, 3, 9, 3), (48, 96, 192, 288)),
    "kobe": VariantSpec("kobe", (3, 3, 15, 3), (48, 96, 192, 288)),
    "tiny": VariantSpec("tiny", (3, 3, 9, 3), (96, 192, 384, 576)),
}

STAGE_KINDS = ("GatedCNN", "FGB", "FGB", "GatedCNN")


@dataclass
class ModelConfig:
    variant: str = "femto"
    depths: Optional[list] = None  # overrides the variant when set
    dims: Optional[list] = None
    num_classes: int = 21
    in_channels: int = 3
    input_size: int = 224
    droppath: float = 0.0
    droppath_ramp: bool = True
    use_fgb: bool = True
    expansion_ratio: float = 8 / 3
    conv_ratio: float = 1.0
    kernel_size: int = 7
    mlp_ratio: int = 4
    norm_eps: float = 1e-6
    gate_init_std: float = 0.02
    dtype: str = "float32"
    seed: int = 0

    def spec(self) -> VariantSpec:
        if self.variant not in VARIANTS and (self.depths is None or self.dims is None):
            raise ConfigurationError(f"unknown variant {self.variant!r}; known: {sorted(VARIANTS)}")
        base = VARIANTS.get(self.variant)
        depths = tuple(self.depths) if self.depths is not None else base.depths
        dims = tuple(self.dims) if self.dims is not None else base.dims
        if len(depths) != 4 or len(dims) != 4:
            raise ConfigurationError(f"need four stages, got depths {depths} dims {dims}")
        return VariantSpec(self.variant, depths, dims)

    def resolutions(self) -> list[int]:
        if self.input_size % 32:
            raise ConfigurationError(f"input_size must be a multiple of 32, got {self.input_size}")
        s = self.input_size // 4
        return [s, s // 2, s // 4, s // 8]

    @property
    def np_dtype(self):
        return {"float32": np.float32, "float64": np.float64}[self.dtype]


class Stage(Module):
    def __init__(self, blocks: list):
        super().__init__()
        self.blocks = blocks
        for i, b in enumerate(blocks):
            setattr(self, f"block{i}", b)

    def __call__(self, x, training=False, rng=None):
        for b in self.blocks:
            x = b(x, training, rng)
        return x


class MambaOutRS(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        spec = cfg.spec()
        res = cfg.resolutions()
        dt = cfg.np_dtype
        depths, dims = spec.depths, spec.dims
        total = sum(depths)
        rates = (np.linspace(0.0, cfg.droppath, total) if cfg.droppath_ramp
                 else np.full(total, cfg.droppath)).tolist()
        self.kinds = tuple(k if (k == "GatedCNN" or cfg.use_fgb) else "GatedCNN" for k in STAGE_KINDS)
        self.resolution_ladder = res

        self.stem = Stem(cfg.in_channels, dims[0], cfg.input_size, rng, dt, cfg.norm_eps)
        idx = 0
        for s in range(4):
            if s > 0:
                setattr(self, f"downsample{s}", Downsample(dims[s - 1], dims[s], rng, dt, cfg.norm_eps))
            blocks = []
            for _ in range(depths[s]):
                if self.kinds[s] == "FGB":
                    bc = FgbCfg(dims[s], (res[s], res[s]), cfg.mlp_ratio, rates[idx],
                                cfg.norm_eps, cfg.gate_init_std)
                    blocks.append(FourierGateBlock(bc, rng, dt))
                else:
                    bc = GatedCnnBlockCfg(dims[s], cfg.expansion_ratio, cfg.conv_ratio,
                                          cfg.kernel_size, cfg.norm_eps)
                    blocks.append(GatedCNNBlock(bc, rng, dt))
                idx += 1
            setattr(self, f"stage{s + 1}", Stage(blocks))
        self.norm = LayerNorm(dims[3], cfg.norm_eps, dt)
        self.head = Head(dims[3], cfg.num_classes, rng, dt, cfg.norm_eps)

    @property
    def stages(self) -> list[Stage]:
        return [getattr(self, f"stage{s}") for s in range(1, 5)]

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1:] != (cfg.input_size, cfg.input_size, cfg.in_channels):
            raise ConfigurationError(
                f"model expects (B,{cfg.input_size},{cfg.input_size},{cfg.in_channels}), got {x.shape}")
        if not isinstance(x, Tensor):
            x = Tensor(x)
        x = _finite(self.stem(x), "stem")
        for s, stage in enumerate(self.stages, start=1):
            if s > 1:
                x = _finite(getattr(self, f"downsample{s - 1}")(x), f"downsample{s - 1}")
            x = _finite(stage(x, training, rng), f"stage{s}")
        x = F.global_avg_pool(self.norm(x))
        return _finite(self.head(x), "head")


def _finite(t: Tensor, where: str) -> Tensor:
    if not np.isfinite(t.data).all():
        raise NumericalError(f"non-finite activations after {where}")
    return t


def build_model(cfg: ModelConfig, rng: Optional[np.random.Generator] = None) -> MambaOutRS:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    cfg.resolutions()
    return MambaOutRS(cfg, rng)


def forward(model: MambaOutRS, x, training: bool = False, rng=None) -> Tensor:
    return model(x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=model.cfg.np_dtype)),
                 training, rng)


def count_params(model: Module) -> int:
    return model.num_params()


def describe(model: MambaOutRS) -> dict:
    """Per-stage breakdown; a stage's subtotal includes the downsample feeding it."""
    cfg = model.cfg
    spec = cfg.spec()
    rows = [{"name": "stem", "kind": "Stem", "count": 1,
             "dims": [cfg.in_channels, spec.dims[0]],
             "resolution": model.resolution_ladder[0], "params": model.stem.num_params()}]
    for s, stage in enumerate(model.stages, start=1):
        ds = getattr(model, f"downsample{s - 1}").num_params() if s > 1 else 0
        row = {"name": f"stage{s}", "kind": model.kinds[s - 1], "count": len(stage.blocks),
               "dims": spec.dims[s - 1], "resolution": model.resolution_ladder[s - 1],
               "params": stage.num_params() + ds, "downsample_params": ds}
        if model.kinds[s - 1] == "FGB":
            row["gate_logits_per_block"] = int(stage.blocks[0].ffg.gate.data.size)
        rows.append(row)
    rows.append({"name": "head", "kind": "Norm+Pool+Linear", "count": 1,
                 "dims": [spec.dims[3], cfg.num_classes], "resolution": 1,
                 "params": model.norm.num_params() + model.head.num_params()})
    return {"variant": spec.name, "depths": list(spec.depths), "dims": list(spec.dims),
            "input_size": cfg.input_size, "num_classes": cfg.num_classes,
            "stage_kinds": list(model.kinds), "resolutions": list(model.resolution_ladder),
            "stages": rows, "total_params": count_params(model)}
