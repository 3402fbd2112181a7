"""Continual average and max pooling."""
from __future__ import annotations

import enum
from collections import deque
from typing import Sequence

import numpy as np

from .conv import _spatial_tuple
from .core import ConstructionError, ShapeError, Windowed, tally

RECOMPUTE_EVERY = 4096


class PoolKind(str, enum.Enum):
    AVG = "avg"
    MAX = "max"


class WindowSum:
    """Running sum over the last ``k`` pushed vectors.

    Holds the previous ``k - 1`` vectors; the running sum is rebuilt from
    them every ``RECOMPUTE_EVERY`` evictions to bound rounding drift.
    """

    def __init__(self, k: int, n: int) -> None:
        self.k = k
        self.ring = np.zeros((k - 1, n))
        self.index = 0
        self.run = np.zeros(n)
        self.evictions = 0

    def push(self, v: np.ndarray, want: bool = True) -> np.ndarray | None:
        if self.k == 1:
            return v.copy() if want else None
        out = self.run + v if want else None
        evicted = self.ring[self.index].copy()
        self.ring[self.index] = v
        self.index = (self.index + 1) % (self.k - 1)
        self.run += v - evicted
        self.evictions += 1
        if self.evictions % RECOMPUTE_EVERY == 0:
            self.run = self.ring.sum(axis=0)
        return out


class MaxWindow:
    """Sliding maximum over the last ``k`` pushed vectors, one monotonic
    deque of tick indices per element.

    The previous ``k - 1`` vectors live in a ring indexed by tick; the
    deques start with tick ``-1`` whose (zero) value stands in for start
    padding.
    """

    def __init__(self, k: int, n: int) -> None:
        self.k = k
        self.ring = np.zeros((max(k - 1, 1), n))
        self.tick = 0
        self.deques = [deque([-1]) for _ in range(n)]

    def _value(self, tick: int, e: int, v: np.ndarray) -> float:
        return v[e] if tick == self.tick else self.ring[tick % (self.k - 1), e]

    def push(self, v: np.ndarray, want: bool = True) -> np.ndarray | None:
        t, k = self.tick, self.k
        if k == 1:
            self.tick += 1
            return v.copy() if want else None
        out = np.empty_like(v) if want else None
        for e, dq in enumerate(self.deques):
            val = v[e]
            while dq and self._value(dq[-1], e, v) <= val:
                dq.pop()
            dq.append(t)
            while dq[0] <= t - k:
                dq.popleft()
            if want:
                out[e] = self._value(dq[0], e, v)
        self.ring[t % (k - 1)] = v
        self.tick += 1
        return out

    def max_len(self) -> int:
        return max(len(dq) for dq in self.deques)


def _pool_windows(xp: np.ndarray, window: Sequence[int], stride: Sequence[int]) -> np.ndarray:
    axes = tuple(range(2, 2 + len(window)))
    win = np.lib.stride_tricks.sliding_window_view(xp, tuple(window), axis=axes)
    return win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]


def pool_forward(x: np.ndarray, kind: PoolKind | str, kernel_size: Sequence[int], padding: int = 0,
                 stride: int = 1, spatial_padding: Sequence[int] = (),
                 spatial_stride: Sequence[int] = ()) -> np.ndarray:
    """Batch pooling with zero padding; averages divide by the full window."""
    kind = PoolKind(kind)
    ks = tuple(kernel_size)
    n_sp = len(ks) - 1
    if x.ndim != 3 + n_sp:
        raise ShapeError(f"pool with {n_sp} spatial axes got clip {x.shape}")
    sp_pad = tuple(spatial_padding) or (0,) * n_sp
    sp_str = tuple(spatial_stride) or (1,) * n_sp
    xp = np.pad(x, [(0, 0), (0, 0), (padding, padding)] + [(p, p) for p in sp_pad])
    if any(xp.shape[i + 2] < ks[i] for i in range(n_sp + 1)):
        raise ShapeError(f"input {x.shape} smaller than pool window {ks}")
    win = _pool_windows(xp, ks, (stride,) + sp_str)
    red_axes = tuple(range(win.ndim - len(ks), win.ndim))
    size = int(np.prod(ks))
    if kind is PoolKind.AVG:
        y = win.sum(axis=red_axes) / size
        tally(y.size * size)
    else:
        y = win.max(axis=red_axes)
        tally(y.size * (size - 1))
    return y


class Pool(Windowed):
    """Temporal pooling with a step mode.

    Incoming steps are first pooled spatially; the ring buffer keeps the
    last ``kernel_t - 1`` spatially pooled steps. Average pooling keeps a
    running sum, max pooling a monotonic deque per output element.
    """

    def __init__(self, kind: PoolKind | str, kernel_size: int | Sequence[int], padding: int = 0,
                 stride: int = 1, spatial_padding: Sequence[int] | int | None = None,
                 spatial_stride: Sequence[int] | int | None = None) -> None:
        ks = (kernel_size,) if isinstance(kernel_size, int) else tuple(kernel_size)
        if any(k < 1 for k in ks):
            raise ConstructionError(f"window extents must be >= 1, got {ks}")
        super().__init__(ks[0], padding, stride)
        self.kind = PoolKind(kind)
        self.kernel_size = ks
        n_sp = len(ks) - 1
        self.spatial_padding = _spatial_tuple(spatial_padding, n_sp, "spatial_padding", 0)
        self.spatial_stride = _spatial_tuple(spatial_stride, n_sp, "spatial_stride", 1)

    @property
    def n_spatial(self) -> int:
        return len(self.kernel_size) - 1

    @property
    def window_size(self) -> int:
        return int(np.prod(self.kernel_size))

    def out_shape(self, in_shape):
        if len(in_shape) != 2 + self.n_spatial:
            raise ShapeError(f"pool expects {self.n_spatial} spatial axes, got step {tuple(in_shape)}")
        sp = [
            (n + 2 * p - k) // s + 1
            for n, p, k, s in zip(in_shape[2:], self.spatial_padding,
                                  self.kernel_size[1:], self.spatial_stride)
        ]
        if any(v < 1 for v in sp):
            raise ShapeError(f"spatial extents {in_shape[2:]} too small for window {self.kernel_size[1:]}")
        return tuple(in_shape[:2]) + tuple(sp)

    def _forward(self, x):
        return pool_forward(x, self.kind, self.kernel_size, self.padding, self.stride,
                            self.spatial_padding, self.spatial_stride)

    def _check_step(self, x):
        self.out_shape(x.shape)

    def _spatial_reduce(self, x: np.ndarray) -> np.ndarray:
        if self.n_spatial == 0:
            return x
        xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in self.spatial_padding])
        win = _pool_windows(xp, self.kernel_size[1:], self.spatial_stride)
        axes = tuple(range(win.ndim - self.n_spatial, win.ndim))
        y = win.sum(axis=axes) if self.kind is PoolKind.AVG else win.max(axis=axes)
        tally(y.size * (int(np.prod(self.kernel_size[1:])) - 1))
        return y

    # -- step mode -----------------------------------------------------------
    def _reset_buffers(self) -> None:
        self._win = None
        self._out_step = None

    def _allocate(self, x):
        self._out_step = self.out_shape(x.shape)
        n = int(np.prod(self._out_step))
        k = self.receptive_field
        self._win = WindowSum(k, n) if self.kind is PoolKind.AVG else MaxWindow(k, n)

    def _buffer_state(self):
        return (self._win, self._out_step)

    def _load_buffers(self, state):
        self._win, self._out_step = state

    def _own_nbytes(self) -> int:
        if self._win is None or self.receptive_field == 1:
            return 0
        return self._win.ring.nbytes

    def _advance(self, x, ready):
        v = self._spatial_reduce(x).ravel()
        k = self.receptive_field
        y = self._win.push(v, want=ready)
        if self.kind is PoolKind.AVG:
            if k > 1:
                tally(2 * v.size)
            if not ready:
                return None
            y = y / self.window_size
            tally(v.size * (2 if k > 1 else 1))
        else:
            if k > 1:
                tally(2 * v.size)
            if not ready:
                return None
        return y.reshape(self._out_step)

    def __repr__(self) -> str:
        return (f"Pool({self.kind.value}, kernel_size={self.kernel_size}, padding={self.padding}, "
                f"stride={self.stride})")


def AvgPool(kernel_size, padding=0, stride=1, **kw) -> Pool:
    return Pool(PoolKind.AVG, kernel_size, padding, stride, **kw)


def MaxPool(kernel_size, padding=0, stride=1, **kw) -> Pool:
    return Pool(PoolKind.MAX, kernel_size, padding, stride, **kw)
