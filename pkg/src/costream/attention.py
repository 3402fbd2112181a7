"""Continual multi-head attention, single-output mode.

Each step projects the input to (q, k, v), keeps the previous
``window - 1`` keys and values, and attends the newest query over them
together with its own key and value. Batch mode slides the
same computation over a clip: output column ``j`` is the last-position
output of attention over input steps ``j .. j + window - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConstructionError, RingBuffer, ShapeError, Windowed, tally

# FLOPs charged per attention score: scale, max, subtract, exp, sum, divide
SOFTMAX_FLOPS = 6


@dataclass
class MhaParams:
    embed_dim: int
    num_heads: int
    window: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    b_q: np.ndarray | None = None
    b_k: np.ndarray | None = None
    b_v: np.ndarray | None = None
    b_o: np.ndarray | None = None

    def __post_init__(self) -> None:
        e, h = self.embed_dim, self.num_heads
        if h < 1 or e % h:
            raise ConstructionError(f"embed_dim {e} not divisible by num_heads {h}")
        if self.window < 1:
            raise ConstructionError(f"window must be >= 1, got {self.window}")
        for name in ("w_q", "w_k", "w_v", "w_o"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if w.shape != (e, e):
                raise ShapeError(f"{name} shape {w.shape} != ({e}, {e})")
            setattr(self, name, w)
        for name in ("b_q", "b_k", "b_v", "b_o"):
            b = getattr(self, name)
            if b is not None:
                setattr(self, name, np.asarray(b, dtype=np.float64).reshape(e))

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @classmethod
    def zeros(cls, embed_dim: int, num_heads: int, window: int, bias: bool = True) -> "MhaParams":
        w = np.zeros((embed_dim, embed_dim))
        b = np.zeros(embed_dim) if bias else None
        return cls(embed_dim, num_heads, window, w, w.copy(), w.copy(), w.copy(),
                   b, None if b is None else b.copy(), None if b is None else b.copy(),
                   None if b is None else b.copy())


def _project(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    # x: (..., E) -> (..., E)
    y = x @ w.T
    tally(2 * y.size * w.shape[1])
    if b is not None:
        y = y + b
    return y


def _attend(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int) -> np.ndarray:
    """Scaled dot-product attention of queries ``q`` (B, Q, E) over keys and
    values ``k``/``v`` (B, Q, N, E); each query has its own key set."""
    b, nq, n, e = k.shape
    dh = e // heads
    qh = q.reshape(b, nq, heads, dh)
    kh = k.reshape(b, nq, n, heads, dh)
    vh = v.reshape(b, nq, n, heads, dh)
    scores = np.einsum("bqhd,bqnhd->bqhn", qh, kh) / np.sqrt(dh)
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    out = np.einsum("bqhn,bqnhd->bqhd", w, vh)
    tally(2 * scores.size * dh + SOFTMAX_FLOPS * scores.size + 2 * out.size * n)
    return out.reshape(b, nq, e)


def mha_forward(params: MhaParams, x: np.ndarray) -> np.ndarray:
    """Standard batch attention over a window-length clip ``(B, E, T)``, T == window."""
    if x.ndim != 3 or x.shape[1] != params.embed_dim:
        raise ShapeError(f"attention expects (B, {params.embed_dim}, T), got {x.shape}")
    if x.shape[2] != params.window:
        raise ShapeError(f"attention window is {params.window}, clip has T={x.shape[2]}")
    xt = np.moveaxis(x, 1, 2)  # (B, T, E)
    q = _project(xt, params.w_q, params.b_q)
    k = _project(xt, params.w_k, params.b_k)
    v = _project(xt, params.w_v, params.b_v)
    t = x.shape[2]
    kk = np.broadcast_to(k[:, None], (k.shape[0], t) + k.shape[1:])
    vv = np.broadcast_to(v[:, None], (v.shape[0], t) + v.shape[1:])
    out = _attend(q, kk, vv, params.num_heads)
    y = _project(out, params.w_o, params.b_o)
    return np.ascontiguousarray(np.moveaxis(y, 2, 1))


class MultiheadAttention(Windowed):
    """Sliding-window attention emitting the newest query's output each step."""

    def __init__(self, params: MhaParams) -> None:
        super().__init__(params.window, 0, 1)
        self.params = params

    @property
    def embed_dim(self) -> int:
        return self.params.embed_dim

    def parameters(self):
        p = self.params
        names = ("w_q", "w_k", "w_v", "w_o", "b_q", "b_k", "b_v", "b_o")
        return {n: getattr(p, n) for n in names if getattr(p, n) is not None}

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[1] != self.embed_dim:
            raise ShapeError(f"attention expects steps (B, {self.embed_dim}), got {tuple(in_shape)}")
        return tuple(in_shape)

    def _check_step(self, x):
        self.out_shape(x.shape)

    def _forward(self, x):
        p = self.params
        if x.ndim != 3 or x.shape[1] != p.embed_dim:
            raise ShapeError(f"attention expects (B, {p.embed_dim}, T), got {x.shape}")
        n = p.window
        xt = np.moveaxis(x, 1, 2)  # (B, T, E)
        k = _project(xt, p.w_k, p.b_k)
        v = _project(xt, p.w_v, p.b_v)
        q = _project(xt[:, n - 1:], p.w_q, p.b_q)  # newest query of every window
        # (B, T', E, n) -> (B, T', n, E)
        kw = np.moveaxis(np.lib.stride_tricks.sliding_window_view(k, n, axis=1), -1, 2)
        vw = np.moveaxis(np.lib.stride_tricks.sliding_window_view(v, n, axis=1), -1, 2)
        out = _attend(q, kw, vw, p.num_heads)
        y = _project(out, p.w_o, p.b_o)
        return np.ascontiguousarray(np.moveaxis(y, 2, 1))

    # -- step mode -------------------------------------------------------------
    def _reset_buffers(self):
        self._keys = RingBuffer(self.receptive_field - 1)
        self._values = RingBuffer(self.receptive_field - 1)

    def _allocate(self, x):
        if self.receptive_field > 1:
            self._keys.allocate(x.shape)
            self._values.allocate(x.shape)

    def _buffer_state(self):
        if self._keys.data is None:
            return None
        return (self._keys.data, self._values.data, self._keys.write_index)

    def _load_buffers(self, state):
        self._reset_buffers()
        if state is not None:
            self._keys.data, self._values.data, i = state
            self._keys.write_index = self._values.write_index = i

    def _own_nbytes(self) -> int:
        return self._keys.nbytes + self._values.nbytes

    def _advance(self, x, ready):
        p = self.params
        k_new = _project(x, p.w_k, p.b_k)
        v_new = _project(x, p.w_v, p.b_v)
        if self._keys.data is None:
            keys, values = k_new[None], v_new[None]
        else:
            keys = np.concatenate([self._keys.ordered(), k_new[None]])
            values = np.concatenate([self._values.ordered(), v_new[None]])
            self._keys.push(k_new)
            self._values.push(v_new)
        if not ready:
            return None
        q = _project(x, p.w_q, p.b_q)
        k = np.moveaxis(keys, 0, 1)[:, None]  # (B, 1, n, E)
        v = np.moveaxis(values, 0, 1)[:, None]
        out = _attend(q[:, None], k, v, p.num_heads)[:, 0]
        return _project(out, p.w_o, p.b_o)

    def __repr__(self) -> str:
        p = self.params
        return f"MultiheadAttention(embed_dim={p.embed_dim}, num_heads={p.num_heads}, window={p.window})"
