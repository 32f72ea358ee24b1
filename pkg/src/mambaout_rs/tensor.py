"""Dense tensors, parameters, and the reverse-mode tape.

Tensors wrap a numpy array. Rank-4 activations are channels-last
``(B, H, W, C)``; the flat index of ``(b, h, w, c)`` is
``((b*H + h)*W + w)*C + c``, i.e. plain C-order.

Operations record themselves on the innermost active :class:`Tape`
whenever one of their inputs requires a gradient. ``Tape.backward`` walks
the recorded ops in exact reverse order.
"""
from __future__ import annotations

from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DTYPES = (np.float32, np.float64)


class DimensionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class NumericalError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def flatten(self) -> np.ndarray:
        """Contiguous scalar buffer in the normative layout."""
        return self.data.reshape(-1).copy()

    @classmethod
    def from_flat(cls, buf, shape, **kw) -> "Tensor":
        buf = np.asarray(buf)
        if buf.size != int(np.prod(shape)):
            raise DimensionError(f"buffer of {buf.size} scalars cannot hold shape {tuple(shape)}")
        return cls(buf.reshape(shape), **kw)

    def __repr__(self) -> str:
        rg = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    # arithmetic sugar; the ops live in functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)


class Parameter(Tensor):
    """A leaf tensor that always requires a gradient."""

    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def flat_index(shape: Sequence[int], b: int, h: int, w: int, c: int) -> int:
    B, H, W, C = shape
    return ((b * H + h) * W + w) * C + c


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_ACTIVE: list = []


def active_tape() -> Optional["Tape"]:
    return _ACTIVE[-1] if _ACTIVE else None


class Tape:
    """Ordered record of executed primitives.

    Use as a context manager; every op run inside it whose inputs need
    gradients is appended. A tape can be consumed by exactly one
    ``backward`` call.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple, backward: Callable) -> None:
        if self.consumed:
            raise TapeError("cannot record on a tape that has already run backward")
        for t in inputs:
            if t is not None and t._tape is not None and t._tape is not self:
                raise TapeError("tensor belongs to a different tape")
        out.requires_grad = True
        out._tape = self
        self.nodes.append(_Node(out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise TapeError("backward already ran on this tape")
        if loss._tape is not self:
            raise TapeError("loss was not produced on this tape")
        if loss.data.size != 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or inp is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if inp._tape is None:
                    if key in leaves:
                        leaves[key] = (inp, leaves[key][1] + gi)
                    else:
                        leaves[key] = (inp, gi)
                elif key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for leaf, g in leaves.values():
            g = g.astype(leaf.data.dtype, copy=False)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        self.nodes = []


def record(out: Tensor, inputs: tuple, backward: Callable) -> Tensor:
    """Attach ``out`` to the active tape if any input needs a gradient."""
    tape = active_tape()
    if tape is not None and any(t is not None and t.requires_grad for t in inputs):
        tape.record(out, inputs, backward)
    return out


class Module:
    """Minimal container: parameters and submodules in insertion order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
            self._modules.pop(key, None)
        elif isinstance(value, Module):
            self._modules[key] = value
            self._params.pop(key, None)
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, m in self._modules.items():
            yield from m.named_modules(prefix + name + ".")

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for n, p in own.items():
            v = np.asarray(state[n])
            if v.shape != p.data.shape:
                raise DimensionError(f"{n}: checkpoint shape {v.shape} != model shape {p.data.shape}")
            p.data = np.ascontiguousarray(v.astype(p.data.dtype, copy=True))
