"""Gated-CNN / Fourier-gate hybrid backbone for scene classification, on numpy."""
from .model import VARIANTS, MambaOutRS, ModelConfig, build_model, count_params, describe, forward
from .tensor import Parameter, Tape, Tensor

__all__ = ["VARIANTS", "MambaOutRS", "ModelConfig", "build_model", "count_params", "describe",
           "forward", "Parameter", "Tape", "Tensor"]
