"""Delay, stride and receptive-field bookkeeping for chains of layers."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence


@dataclass(frozen=True)
class LayerTiming:
    f: int
    p: int = 0
    s: int = 1

    def __post_init__(self) -> None:
        if self.f < 1 or self.s < 1 or not 0 <= self.p <= self.f - 1:
            raise ValueError(f"invalid layer timing f={self.f} p={self.p} s={self.s}")

    @property
    def d(self) -> int:
        return delay(self)


@dataclass(frozen=True)
class NetTiming:
    s_acc: tuple[int, ...]
    p_acc: tuple[int, ...]
    f_acc: tuple[int, ...]
    d_acc: tuple[int, ...]

    @property
    def s_nn(self) -> int:
        return self.s_acc[-1]

    @property
    def r_nn(self) -> Fraction:
        return Fraction(1, self.s_nn)

    @property
    def d_nn(self) -> int:
        return self.d_acc[-1]

    @property
    def f_nn(self) -> int:
        return self.f_acc[-1]

    @property
    def p_nn(self) -> int:
        return self.p_acc[-1]

    def as_layer(self) -> LayerTiming:
        return LayerTiming(self.f_nn, self.p_nn, self.s_nn)


def delay(lt: LayerTiming) -> int:
    return lt.f - lt.p - 1


def accumulate(layers: Sequence[LayerTiming]) -> NetTiming:
    """Accumulated stride, padding, receptive field and delay per layer.

    Padding and receptive field of layer ``i`` are scaled by the stride
    accumulated *before* it and added to the running totals.
    """
    if not layers:
        raise ValueError("accumulate() needs at least one layer")
    first = layers[0]
    s_acc, p_acc, f_acc = [first.s], [first.p], [first.f]
    for lt in layers[1:]:
        prev_s = s_acc[-1]
        p_acc.append(p_acc[-1] + lt.p * prev_s)
        f_acc.append(f_acc[-1] + (lt.f - 1) * prev_s)
        s_acc.append(lt.s * prev_s)
    d_acc = [f - p - 1 for f, p in zip(f_acc, p_acc)]
    return NetTiming(tuple(s_acc), tuple(p_acc), tuple(f_acc), tuple(d_acc))


def combine(a: NetTiming, b: NetTiming) -> NetTiming:
    """Timing of net ``a`` followed by net ``b``."""
    s0 = a.s_nn
    s_acc = a.s_acc + tuple(s * s0 for s in b.s_acc)
    p_acc = a.p_acc + tuple(a.p_nn + p * s0 for p in b.p_acc)
    f_acc = a.f_acc + tuple(a.f_nn + (f - 1) * s0 for f in b.f_acc)
    d_acc = tuple(f - p - 1 for f, p in zip(f_acc, p_acc))
    return NetTiming(s_acc, p_acc, f_acc, d_acc)


def readiness_schedule(nt: NetTiming, horizon: int) -> list[bool]:
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    d, s = nt.d_nn, nt.s_nn
    return [t >= d and (t - d) % s == 0 for t in range(horizon)]
