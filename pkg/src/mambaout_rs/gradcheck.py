"""Central finite-difference checks of tape gradients.

Every case builds a scalar ``L = sum(f(inputs) * R)`` with a fixed random
projection ``R`` in float64, runs the tape, and compares each input
gradient with ``(L(x + d) - L(x - d)) / 2d`` evaluated without any tape.
The reported error is ``||g_tape - g_fd|| / max(||g_tape||, ||g_fd||)``
over the checked coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import functional as F
from .blocks import (Downsample, FgbCfg, FourierGateBlock, GatedCNNBlock, GatedCnnBlockCfg,
                     Head, Stem)
from .model import ModelConfig, build_model
from .spectral import FourierFilterGate, ffg
from .tensor import Module, Parameter, Tape, Tensor

DELTA = 1e-5
TOLERANCE = 1e-6


@dataclass
class GradResult:
    case: str
    shape: str
    max_rel_error: float
    per_input: dict
    tolerance: float = TOLERANCE

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / den) if den > 0 else 0.0


def check(fn: Callable, inputs: dict, rng: np.random.Generator, max_coords: int | None = None,
          delta: float = DELTA) -> dict:
    """Compare tape and finite-difference gradients of ``sum(fn(**inputs) * R)``.

    ``inputs`` maps names to :class:`Parameter` objects (float64). When
    ``max_coords`` is set, at most that many coordinates per input are
    perturbed, chosen at random.
    """
    out0 = fn(**{k: Tensor(v.data) for k, v in inputs.items()})
    R = rng.standard_normal(out0.shape)

    def loss_value() -> float:
        out = fn(**{k: Tensor(v.data) for k, v in inputs.items()})
        return float(np.sum(out.data * R))

    for p in inputs.values():
        p.grad = None
    with Tape() as tape:
        L = F.sum_all(F.mul(fn(**inputs), R))
    tape.backward(L)

    errors = {}
    for name, p in inputs.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        num = np.empty(len(coords))
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + delta
            up = loss_value()
            flat[i] = orig - delta
            down = loss_value()
            flat[i] = orig
            num[j] = (up - down) / (2 * delta)
        errors[name] = _rel(g.reshape(-1)[coords], num)
    return errors


def module_check(module: Module, forward: Callable, x: np.ndarray, rng, max_coords=40) -> dict:
    """Gradient check of a module's input and every parameter."""
    params = dict(module.named_parameters())
    xin = Parameter(x)

    def fn(**kw):
        try:
            # route the candidate tensors through the module's own slots
            for n in params:
                _set_param(module, n, kw[n])
            return forward(kw["x"])
        finally:
            for n, p in params.items():
                _set_param(module, n, p)

    inputs = {"x": xin, **params}
    return check(fn, inputs, rng, max_coords)


def _set_param(module: Module, dotted: str, value) -> None:
    *path, leaf = dotted.split(".")
    m = module
    for part in path:
        m = getattr(m, part)
    object.__setattr__(m, leaf, value)


def _p(rng, *shape) -> Parameter:
    return Parameter(rng.standard_normal(shape))


def _primitive_cases(rng):
    shapes = [(1, 3, 3, 5), (2, 4, 5, 3), (2, 5, 4, 4)]
    for s in shapes:
        C = s[-1]
        yield "linear", s, F.linear, {"x": _p(rng, *s), "W": _p(rng, C, C + 1), "b": _p(rng, C + 1)}
        yield "dwconv2d", s, F.dwconv2d, {"x": _p(rng, *s), "kernel": _p(rng, 3, 3, C), "bias": _p(rng, C)}
        for stride in (1, 2):
            yield (f"conv2d_s{stride}", s,
                   lambda x, weight, bias, st=stride: F.conv2d(x, weight, bias, st),
                   {"x": _p(rng, *s), "weight": _p(rng, 3, 3, C, 2), "bias": _p(rng, 2)})
        yield "gelu", s, F.gelu, {"x": _p(rng, *s)}
        yield "sigmoid", s, F.sigmoid, {"x": _p(rng, *s)}
        yield "layernorm", s, F.layernorm, {"x": _p(rng, *s), "gamma": _p(rng, C), "beta": _p(rng, C)}
        yield "global_avg_pool", s, F.global_avg_pool, {"x": _p(rng, *s)}
        yield "add", s, F.add, {"a": _p(rng, *s), "b": _p(rng, C)}
        yield "mul", s, F.mul, {"a": _p(rng, *s), "b": _p(rng, *s)}
        yield ("split_concat", s,
               lambda x: F.concat_channels(F.split_channels(x, (1, C - 1))[::-1]),
               {"x": _p(rng, *s)})
        B, H, W, _ = s
        yield "ffg", s, ffg, {"x": _p(rng, *s), "w": _p(rng, 1, C, H, W // 2 + 1)}
    for B, K in ((1, 3), (4, 5), (3, 21)):
        t = rng.random((B, K))
        t /= t.sum(axis=1, keepdims=True)
        yield ("softmax_cross_entropy", (B, K),
               lambda logits, t=t: F.softmax_cross_entropy(logits, t),
               {"logits": _p(rng, B, K)})


def primitive_results(seed: int = 0) -> list[GradResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, shape, fn, inputs in _primitive_cases(rng):
        errs = check(fn, inputs, rng)
        out.append(GradResult(name, str(tuple(shape)), max(errs.values()), errs))
    return out


def _block_cases(rng):
    f64 = np.float64
    for C, H, W in ((8, 4, 4), (6, 3, 5), (4, 5, 6)):
        blk = GatedCNNBlock(GatedCnnBlockCfg(C, kernel_size=3), rng, f64)
        yield "gated_cnn_block", (2, H, W, C), blk, blk
        gate = FourierFilterGate(C, (H, W), rng, f64, init_std=1.0)
        yield "ffg_module", (2, H, W, C), gate, gate
        fgb = FourierGateBlock(FgbCfg(C, (H, W), mlp_ratio=2, gate_init_std=1.0), rng, f64)
        yield "fgb_eval", (2, H, W, C), fgb, fgb
        fgb_d = FourierGateBlock(FgbCfg(C, (H, W), mlp_ratio=2, droppath=0.5), rng, f64)
        # reseed per call so every evaluation sees the same drop mask
        yield ("fgb_train_droppath", (4, H, W, C), fgb_d,
               lambda x, m=fgb_d: m(x, training=True, rng=np.random.default_rng(3)))
        yield "downsample", (2, 2 * H, 2 * W, C), Downsample(C, C + 2, rng, f64), None
        yield "head", (3, 1, 1, C), Head(C, 5, rng, f64), None
    for S, cin, dim in ((8, 3, 8), (16, 2, 6), (12, 1, 10)):
        yield "stem", (2, S, S, cin), Stem(cin, dim, S, rng, f64), None


def block_results(seed: int = 0, max_coords: int = 40) -> list[GradResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, shape, module, fwd in _block_cases(rng):
        fwd = fwd or module
        # random affine norms so the check does not sit at the gamma=1, beta=0 special point
        for n, p in module.named_parameters():
            if n.endswith("norm.weight") or n.endswith("norm1.weight") or n.endswith("norm2.weight"):
                p.data = 1.0 + 0.3 * rng.standard_normal(p.data.shape)
            elif p.data.ndim == 1:
                p.data = 0.1 * rng.standard_normal(p.data.shape)
            else:
                p.data = p.data * 10.0
        errs = module_check(module, fwd, rng.standard_normal(shape), rng, max_coords)
        out.append(GradResult(name, str(tuple(shape)), max(errs.values()), errs))
    return out


def model_result(seed: int = 0, max_coords: int = 12, tolerance: float = 1e-5) -> GradResult:
    """End-to-end check of a micro model (depths 1,1,1,1; dims 8; input 32)."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(variant="micro", depths=[1, 1, 1, 1], dims=[8, 8, 8, 8], input_size=32,
                      num_classes=3, kernel_size=3, dtype="float64", seed=seed, gate_init_std=1.0)
    model = build_model(cfg)
    for _, p in model.named_parameters():
        if p.data.ndim > 1:
            p.data = p.data * 10.0
    x = rng.random((2, 32, 32, 3))
    errs = module_check(model, model, x, rng, max_coords)
    return GradResult("micro_model", str((2, 32, 32, 3)), max(errs.values()), errs, tolerance)


def run_all(scope: str = "all", seed: int = 0) -> list[GradResult]:
    results = []
    if scope in ("all", "primitives"):
        results += primitive_results(seed)
    if scope in ("all", "blocks"):
        results += block_results(seed)
    if scope in ("all", "model"):
        results.append(model_result(seed))
    return results
