"""Continual temporal convolution over ``(B, C, T, S...)`` inputs."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import ConstructionError, RingBuffer, ShapeError, Windowed, tally


def _spatial_tuple(value, n: int, name: str, default: int) -> tuple[int, ...]:
    if value is None:
        return (default,) * n
    if isinstance(value, int):
        return (value,) * n
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ConstructionError(f"{name} needs {n} entries, got {len(value)}")
    return value


def window_correlate(xp: np.ndarray, kernel: np.ndarray, stride: Sequence[int]) -> np.ndarray:
    """Unpadded cross-correlation of ``xp`` (B, C, T, S...) with ``kernel``.

    ``stride`` has one entry per non-batch, non-channel axis. Returns
    (B, O, T', S'...) without bias.
    """
    n_ax = kernel.ndim - 2
    axes = tuple(range(2, 2 + n_ax))
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel.shape[2:], axis=axes)
    win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    # contract channel and all kernel axes
    x_axes = (1,) + tuple(range(2 + n_ax, 2 + 2 * n_ax))
    y = np.tensordot(win, kernel, axes=(x_axes, tuple(range(1, kernel.ndim))))
    tally(2 * y.size * int(np.prod(kernel.shape[1:])))
    return np.moveaxis(y, -1, 1)


def conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None,
                 padding: int = 0, stride: int = 1,
                 spatial_padding: Sequence[int] = (), spatial_stride: Sequence[int] = ()) -> np.ndarray:
    """Batch cross-correlation with symmetric zero padding."""
    n_sp = kernel.ndim - 3
    sp_pad = tuple(spatial_padding) or (0,) * n_sp
    sp_str = tuple(spatial_stride) or (1,) * n_sp
    if x.ndim != kernel.ndim or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"input {x.shape} incompatible with kernel {kernel.shape}")
    pads = [(0, 0), (0, 0), (padding, padding)] + [(p, p) for p in sp_pad]
    xp = np.pad(x, pads)
    if any(xp.shape[i + 2] < kernel.shape[i + 2] for i in range(n_sp + 1)):
        raise ShapeError(f"input {x.shape} smaller than kernel {kernel.shape} after padding")
    y = window_correlate(xp, kernel, (stride,) + sp_str)
    if bias is not None:
        y += bias.reshape((1, -1) + (1,) * (y.ndim - 2))
    return y


class Conv(Windowed):
    """Temporal (and optionally spatial) convolution with a step mode.

    The state is a ring buffer of the last ``kernel_t - 1`` input steps,
    zero-filled after ``clean_state`` so that start padding is implicit.

    Args:
        in_channels: channels of the input.
        out_channels: channels of the output.
        kernel_size: temporal extent ``kernel_t`` followed by one extent per
            spatial axis (an int means temporal only).
        padding: temporal zero padding, ``0 <= padding <= kernel_t - 1``.
        stride: temporal stride.
        spatial_padding, spatial_stride: per spatial axis.
        kernel, bias: optional initial weights; zeros otherwise.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int | Sequence[int],
                 padding: int = 0, stride: int = 1,
                 spatial_padding: Sequence[int] | int | None = None,
                 spatial_stride: Sequence[int] | int | None = None,
                 kernel: np.ndarray | None = None, bias: np.ndarray | bool | None = True) -> None:
        ks = (kernel_size,) if isinstance(kernel_size, int) else tuple(kernel_size)
        if any(k < 1 for k in ks):
            raise ConstructionError(f"kernel extents must be >= 1, got {ks}")
        super().__init__(ks[0], padding, stride)
        n_sp = len(ks) - 1
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = ks
        self.spatial_padding = _spatial_tuple(spatial_padding, n_sp, "spatial_padding", 0)
        self.spatial_stride = _spatial_tuple(spatial_stride, n_sp, "spatial_stride", 1)
        shape = (out_channels, in_channels) + ks
        if kernel is None:
            kernel = np.zeros(shape)
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.shape != shape:
            raise ShapeError(f"kernel shape {kernel.shape} != expected {shape}")
        if not np.all(np.isfinite(kernel)):
            raise ConstructionError("kernel must be finite")
        self.kernel = kernel
        if bias is True:
            bias = np.zeros(out_channels)
        elif bias is False:
            bias = None
        if bias is not None:
            bias = np.asarray(bias, dtype=np.float64)
            if bias.shape != (out_channels,):
                raise ShapeError(f"bias shape {bias.shape} != ({out_channels},)")
        self.bias = bias

    @property
    def n_spatial(self) -> int:
        return len(self.kernel_size) - 1

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"kernel": self.kernel}
        if self.bias is not None:
            params["bias"] = self.bias
        return params

    def out_shape(self, in_shape):
        self._check_step_shape(in_shape)
        sp = [
            (n + 2 * p - k) // s + 1
            for n, p, k, s in zip(in_shape[2:], self.spatial_padding,
                                  self.kernel_size[1:], self.spatial_stride)
        ]
        if any(v < 1 for v in sp):
            raise ShapeError(f"spatial extents {in_shape[2:]} too small for kernel {self.kernel_size[1:]}")
        return (in_shape[0], self.out_channels) + tuple(sp)

    def _check_step_shape(self, shape) -> None:
        if len(shape) != 2 + self.n_spatial or shape[1] != self.in_channels:
            raise ShapeError(
                f"conv expects steps (B, {self.in_channels}, {self.n_spatial} spatial axes), got {tuple(shape)}"
            )

    def _check_step(self, x):
        self._check_step_shape(x.shape)

    def _forward(self, x):
        self._check_step_shape(x.shape[:2] + x.shape[3:])
        return conv_forward(x, self.kernel, self.bias, self.padding, self.stride,
                            self.spatial_padding, self.spatial_stride)

    # -- step mode ---------------------------------------------------------
    def _reset_buffers(self) -> None:
        self._buf = RingBuffer(self.receptive_field - 1) if self.receptive_field > 1 else None

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
        y = None
        if ready:
            if self._buf is None:
                window = x[:, :, None]
            else:
                window = np.concatenate([self._buf.ordered(), x[None]], axis=0)
                window = np.moveaxis(window, 0, 2)
            y = conv_forward(window, self.kernel, self.bias, 0, 1,
                             self.spatial_padding, self.spatial_stride)[:, :, 0]
        if self._buf is not None:
            self._buf.push(x)
        return y

    def __repr__(self) -> str:
        return (f"Conv({self.in_channels}, {self.out_channels}, kernel_size={self.kernel_size}, "
                f"padding={self.padding}, stride={self.stride})")
