"""Pointwise and plumbing operators."""
from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import ConstructionError, Lambda, RingBuffer, ShapeError, Stateless, Windowed, tally


class Linear(Stateless):
    """Affine map over the channel axis, applied at every time/space position."""

    def __init__(self, in_channels: int, out_channels: int, weight: np.ndarray | None = None,
                 bias: np.ndarray | bool | None = True) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        weight = np.zeros((out_channels, in_channels)) if weight is None else np.asarray(weight, float)
        if weight.shape != (out_channels, in_channels):
            raise ShapeError(f"weight shape {weight.shape} != ({out_channels}, {in_channels})")
        if not np.all(np.isfinite(weight)):
            raise ConstructionError("weight must be finite")
        self.weight = weight
        if bias is True:
            bias = np.zeros(out_channels)
        elif bias is False:
            bias = None
        self.bias = None if bias is None else np.asarray(bias, float).reshape(out_channels)

    def parameters(self):
        params = {"weight": self.weight}
        if self.bias is not None:
            params["bias"] = self.bias
        return params

    def out_shape(self, in_shape):
        if len(in_shape) < 2 or in_shape[1] != self.in_channels:
            raise ShapeError(f"linear expects {self.in_channels} channels, got step {tuple(in_shape)}")
        return (in_shape[0], self.out_channels) + tuple(in_shape[2:])

    def _apply_step(self, x):
        self.out_shape(x.shape)
        y = np.tensordot(self.weight, x, axes=([1], [1]))  # (O, B, S...)
        tally(2 * y.size * self.in_channels)
        y = np.moveaxis(y, 0, 1)
        if self.bias is not None:
            y = y + self.bias.reshape((1, -1) + (1,) * (y.ndim - 2))
        return y

    def _apply_clip(self, x):
        if x.ndim < 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"linear expects {self.in_channels} channels, got clip {x.shape}")
        return super()._apply_clip(x)


class Delay(Windowed):
    """Shifts a stream by ``d`` ticks; identity in batch mode."""

    def __init__(self, d: int) -> None:
        if d < 0:
            raise ConstructionError(f"delay must be >= 0, got {d}")
        super().__init__(d + 1, 0, 1, end_pad=d)
        self.lag = Fraction(d)

    def output_length(self, t: int) -> int:
        return t

    def _forward(self, x):
        return x

    def _reset_buffers(self):
        self._buf = RingBuffer(self.delay) if self.delay else None

    def _allocate(self, x):
        if self._buf is not None:
            self._buf.allocate(x.shape)

    def _buffer_state(self):
        if self._buf is None or self._buf.data is None:
            return None
        return (self._buf.data, self._buf.write_index)

    def _load_buffers(self, state):
        self._reset_buffers()
        if state is not None:
            self._buf.data, self._buf.write_index = state

    def _own_nbytes(self) -> int:
        return 0 if self._buf is None else self._buf.nbytes

    def _advance(self, x, ready):
        if self._buf is None:
            return x
        out = self._buf.push(x)
        return out if ready else None

    def __repr__(self) -> str:
        return f"Delay({self.delay})"


class Reshape(Stateless):
    """Reshape the per-step ``(C, S...)`` block; batch and time axes untouched."""

    def __init__(self, shape: Sequence[int]) -> None:
        super().__init__()
        self.shape = tuple(int(v) for v in shape)
        if not self.shape or any(v < 1 for v in self.shape):
            raise ConstructionError(f"invalid target shape {self.shape}")

    def out_shape(self, in_shape):
        if int(np.prod(in_shape[1:])) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape step {tuple(in_shape[1:])} into {self.shape}")
        return (in_shape[0],) + self.shape

    def _apply_step(self, x):
        return x.reshape(self.out_shape(x.shape))

    def __repr__(self) -> str:
        return f"Reshape({self.shape})"


def relu() -> Lambda:
    def relu(x):
        tally(x.size)
        return np.maximum(x, 0.0)
    return Lambda(relu, "relu")


def identity() -> Lambda:
    return Lambda(lambda x: x, "identity")


def scale(k: float) -> Lambda:
    def scale(x):
        tally(x.size)
        return x * k
    return Lambda(scale, f"scale:{k!r}")


def add(k: float) -> Lambda:
    def add(x):
        tally(x.size)
        return x + k
    return Lambda(add, f"add:{k!r}")


Multiply = scale
Add = add


def lambda_from_name(name: str) -> Lambda:
    """Build a catalog lambda: ``relu``, ``identity``, ``scale:k`` or ``add:k``."""
    head, _, arg = name.partition(":")
    if head in ("relu", "identity") and not arg:
        return relu() if head == "relu" else identity()
    if head in ("scale", "add") and arg:
        try:
            k = float(arg)
        except ValueError:
            raise ConstructionError(f"bad constant in lambda {name!r}") from None
        fn = scale(k) if head == "scale" else add(k)
        fn.name = name
        return fn
    raise ConstructionError(f"unknown lambda {name!r}; expected relu, identity, scale:k or add:k")
