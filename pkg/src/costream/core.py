"""Continual-module contract: call modes, state rules, timing attributes.

Data layout follows ``(B, C, T, S...)`` for clips and ``(B, C, S...)`` for
single steps. A step output is either an array ("ready") or ``None``
("empty"). Parallel streams are carried as tuples of arrays.
"""
from __future__ import annotations

import contextlib
import contextvars
import copy
import enum
import hashlib
import pickle
from fractions import Fraction
from typing import Any, Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "CallMode",
    "CoModule",
    "ConstructionError",
    "CostreamError",
    "END",
    "InsufficientLengthError",
    "Lambda",
    "ShapeError",
    "Stateless",
    "call_mode",
    "count_flops",
    "stack_ready",
    "state_digest",
    "wrap_stateless",
]


class CostreamError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CostreamError, ValueError):
    """Input or parameter shape does not match what a module expects."""


class InsufficientLengthError(ShapeError):
    """Clip too short for the module to produce a single output column."""


class ConstructionError(CostreamError, ValueError):
    """Module or composite cannot be built from the given arguments."""


class _EndOfStream:
    __slots__ = ()

    def __repr__(self) -> str:
        return "END"

    def __reduce__(self):
        return "END"


# Flush marker threaded through a network after its input is exhausted.
END = _EndOfStream()


class CallMode(str, enum.Enum):
    FORWARD = "forward"
    FORWARD_STEP = "forward_step"
    FORWARD_STEPS = "forward_steps"


_MODE_OVERRIDE: contextvars.ContextVar[CallMode | None] = contextvars.ContextVar(
    "costream_call_mode", default=None
)


@contextlib.contextmanager
def call_mode(mode: CallMode | str) -> Iterator[None]:
    """Temporarily route every module's ``__call__`` to ``mode``."""
    token = _MODE_OVERRIDE.set(CallMode(mode))
    try:
        yield
    finally:
        _MODE_OVERRIDE.reset(token)


# ---------------------------------------------------------------------------
# Instrumented FLOP counting. Module kernels report the work they actually
# perform (derived from runtime operand shapes); ``count_flops`` collects it.

_FLOP_SINK: contextvars.ContextVar[list | None] = contextvars.ContextVar(
    "costream_flop_sink", default=None
)


class FlopTally:
    def __init__(self) -> None:
        self.total = 0

    def reset(self) -> int:
        n, self.total = self.total, 0
        return n


@contextlib.contextmanager
def count_flops() -> Iterator[FlopTally]:
    tally = FlopTally()
    token = _FLOP_SINK.set([tally])
    try:
        yield tally
    finally:
        _FLOP_SINK.reset(token)


def tally(n: int) -> None:
    sink = _FLOP_SINK.get()
    if sink is not None:
        sink[0].total += int(n)


# ---------------------------------------------------------------------------


def _as_array(x: Any) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def _coerce(x: Any) -> Any:
    if x is None or x is END:
        return x
    if isinstance(x, tuple):
        return tuple(_coerce(v) for v in x)
    return _as_array(x)


class CoModule:
    """Base class of every continual operator and combinator.

    Subclasses set the timing attributes and implement ``_forward`` (batch
    mode) and ``_step`` (one tick; receives an array, a tuple of arrays, or
    ``END`` while flushing end padding).

    Timing attributes:
        receptive_field: input steps spanned from the earliest input used by
            an output to the tick at which that output is emitted.
        delay: ticks before the first ready output.
        stride: ticks between ready outputs.
        lag: ticks between the temporal center of an output's window and
            its emission. Batch output column ``j`` is centered on input
            index ``offset + j * stride`` where ``offset = delay - lag``.
    """

    receptive_field: int = 1
    delay: int = 0
    stride: int = 1
    lag: Fraction = Fraction(0)

    def __init__(self) -> None:
        self._call_mode = CallMode.FORWARD

    # -- timing -----------------------------------------------------------
    @property
    def padding(self) -> int:
        return self.receptive_field - 1 - self.delay

    @property
    def offset(self) -> Fraction:
        return self.delay - self.lag

    def output_length(self, t: int) -> int:
        """Number of batch output columns for a clip of ``t`` steps."""
        return (t + 2 * self.padding - self.receptive_field) // self.stride + 1

    # -- call modes -------------------------------------------------------
    @property
    def call_mode(self) -> CallMode:
        return self._call_mode

    @call_mode.setter
    def call_mode(self, mode: CallMode | str) -> None:
        self._call_mode = CallMode(mode)

    def __call__(self, x, *args, **kwargs):
        mode = _MODE_OVERRIDE.get() or self._call_mode
        if mode is CallMode.FORWARD:
            return self.forward(x, *args, **kwargs)
        if mode is CallMode.FORWARD_STEP:
            return self.forward_step(x, *args, **kwargs)
        return self.forward_steps(x, *args, **kwargs)

    # -- public modes -----------------------------------------------------
    def forward(self, x):
        """Batch inference over a full clip; never touches state."""
        x = _coerce(x)
        n = self.output_length(_clip_length(x))
        if n < 1:
            raise InsufficientLengthError(
                f"{type(self).__name__}: clip of length {_clip_length(x)} yields no output"
            )
        return self._forward(x)

    def forward_step(self, x, update_state: bool = True):
        """Process one time-step; returns the output array or ``None`` (empty)."""
        if x is None:
            return None
        x = _coerce(x)
        if update_state:
            return self._step(x)
        saved = self.get_state()
        try:
            return self._step(x)
        finally:
            self.set_state(saved)

    def forward_steps(self, x, pad_end: bool = False, update_state: bool = True) -> list:
        """Fold ``forward_step`` over the clip's time axis.

        Returns one entry per tick (``None`` for empty ticks). With
        ``pad_end`` the module's end padding is flushed afterwards and the
        extra ticks are appended.
        """
        x = _coerce(x)
        saved = None if update_state else self.get_state()
        try:
            outs = [self._step(col) for col in _columns(x)]
            if pad_end:
                outs.extend(self._flush())
            return outs
        finally:
            if saved is not None:
                self.set_state(saved)

    def flush(self, update_state: bool = True) -> list:
        """Emit the outputs produced by the end padding of a finished stream."""
        saved = None if update_state else self.get_state()
        try:
            return self._flush()
        finally:
            if saved is not None:
                self.set_state(saved)

    def _flush(self, limit: int = 1_000_000) -> list:
        outs = []
        for _ in range(limit):
            y = self._step(END)
            if y is END:
                return outs
            outs.append(y)
        raise RuntimeError("end-of-stream flush did not terminate")

    # -- state --------------------------------------------------------------
    def children(self) -> Sequence["CoModule"]:
        return ()

    def _own_state(self) -> dict:
        return {}

    def _load_own_state(self, state: dict) -> None:
        pass

    def _reset_own_state(self) -> None:
        pass

    def get_state(self) -> dict:
        return {
            "own": copy.deepcopy(self._own_state()),
            "children": [c.get_state() for c in self.children()],
        }

    def set_state(self, state: dict) -> None:
        self._load_own_state(copy.deepcopy(state["own"]))
        for c, s in zip(self.children(), state["children"]):
            c.set_state(s)

    def clean_state(self) -> None:
        self._reset_own_state()
        for c in self.children():
            c.clean_state()

    def state_nbytes(self) -> int:
        """Bytes held in streaming buffers (ring buffers of past steps)."""
        return self._own_nbytes() + sum(c.state_nbytes() for c in self.children())

    def _own_nbytes(self) -> int:
        return 0

    # -- shapes / parameters --------------------------------------------------
    def out_shape(self, in_shape):
        """Step shape ``(B, C, S...)`` produced for a given input step shape."""
        return in_shape

    def parameters(self) -> dict[str, np.ndarray]:
        return {}

    def params_count(self) -> int:
        return sum(p.size for p in self.parameters().values()) + sum(
            c.params_count() for c in self.children()
        )

    def _forward(self, x):
        raise NotImplementedError

    def _step(self, x):
        raise NotImplementedError


def _clip_length(x) -> int:
    if isinstance(x, tuple):
        lengths = {v.shape[2] for v in x}
        if len(lengths) != 1:
            raise ShapeError(f"parallel streams have unequal lengths {sorted(lengths)}")
        return lengths.pop()
    if x.ndim < 3:
        raise ShapeError(f"clip must have shape (B, C, T, S...), got {x.shape}")
    return x.shape[2]


def _columns(x):
    t = _clip_length(x)
    if isinstance(x, tuple):
        return [tuple(v[:, :, i] for v in x) for i in range(t)]
    return [x[:, :, i] for i in range(t)]


def stack_ready(outs: Sequence) -> Any:
    """Stack the ready entries of a ``forward_steps`` result along time."""
    ready = [y for y in outs if y is not None]
    if not ready:
        return None
    if isinstance(ready[0], tuple):
        return tuple(np.stack(col, axis=2) for col in zip(*ready))
    return np.stack(ready, axis=2)


def state_digest(module: CoModule) -> str:
    """Hash of the full module state; equal digests mean bit-identical state."""
    return hashlib.sha256(pickle.dumps(module.get_state(), protocol=4)).hexdigest()


def clip_to_time_major(x: np.ndarray) -> np.ndarray:
    return np.moveaxis(x, 2, 0)


class Stateless(CoModule):
    """Per-step operator: receptive field 1, no delay, no state."""

    def _step(self, x):
        if x is END:
            return END
        return self._apply_step(x)

    def _forward(self, x):
        return self._apply_clip(x)

    def _apply_step(self, x):
        raise NotImplementedError

    def _apply_clip(self, x):
        # (B, C, T, S...) -> fold T into batch, apply, unfold
        b, t = x.shape[0], x.shape[2]
        steps = np.moveaxis(x, 2, 1).reshape((b * t,) + x.shape[1:2] + x.shape[3:])
        y = self._apply_step(steps)
        y = y.reshape((b, t) + y.shape[1:])
        return np.ascontiguousarray(np.moveaxis(y, 1, 2))


class Lambda(Stateless):
    """Applies a pure step-to-step function at every tick."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str | None = None) -> None:
        super().__init__()
        self.fn = fn
        self.name = name or getattr(fn, "__name__", "lambda")
        self._channel_map: tuple | None = None

    def _apply_step(self, x):
        y = _as_array(self.fn(x))
        if y.shape[0] != x.shape[0]:
            raise ShapeError(f"lambda {self.name!r} changed the batch size")
        sig = (x.shape[1:], y.shape[1:])
        if self._channel_map is None:
            self._channel_map = sig
        elif self._channel_map != sig:
            raise ShapeError(
                f"lambda {self.name!r} output shape {y.shape[1:]} inconsistent "
                f"with earlier calls {self._channel_map[1]}"
            )
        return y

    def _apply_clip(self, x):
        cols = [self._apply_step(x[:, :, i]) for i in range(x.shape[2])]
        return np.stack(cols, axis=2)

    def out_shape(self, in_shape):
        probe = self.fn(np.zeros(in_shape))
        return tuple(np.shape(probe))

    def __repr__(self) -> str:
        return f"Lambda({self.name})"


def wrap_stateless(fn: Callable[[np.ndarray], np.ndarray], name: str | None = None) -> Lambda:
    return Lambda(fn, name)


class RingBuffer:
    """Fixed-capacity FIFO of equally shaped steps, oldest first on read."""

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self.data: np.ndarray | None = None
        self.write_index = 0

    def allocate(self, step_shape: tuple) -> None:
        self.data = np.zeros((self.capacity,) + tuple(step_shape))
        self.write_index = 0

    def ordered(self) -> np.ndarray:
        i = self.write_index
        return np.concatenate([self.data[i:], self.data[:i]], axis=0)

    def oldest(self) -> np.ndarray:
        return self.data[self.write_index]

    def push(self, step: np.ndarray) -> np.ndarray:
        """Store ``step`` over the oldest slot and return the evicted step."""
        evicted = self.data[self.write_index].copy()
        self.data[self.write_index] = step
        self.write_index = (self.write_index + 1) % self.capacity
        return evicted

    @property
    def nbytes(self) -> int:
        return 0 if self.data is None else self.data.nbytes


class Windowed(CoModule):
    """Stateful leaf with a receptive field, start padding and stride.

    Ticks are counted from the last ``clean_state``. The output of tick ``t``
    is ready iff ``t >= delay`` and ``(t - delay) % stride == 0``. Start
    padding is realised by zero-initialised state; end padding is fed as
    zero steps when ``END`` arrives.
    """

    def __init__(self, receptive_field: int, padding: int, stride: int,
                 end_pad: int | None = None) -> None:
        super().__init__()
        if receptive_field < 1:
            raise ConstructionError(f"receptive field must be >= 1, got {receptive_field}")
        if stride < 1:
            raise ConstructionError(f"stride must be >= 1, got {stride}")
        if not 0 <= padding <= receptive_field - 1:
            raise ConstructionError(
                f"padding must lie in [0, {receptive_field - 1}], got {padding}"
            )
        self.receptive_field = receptive_field
        self.delay = receptive_field - padding - 1
        self.stride = stride
        self.lag = Fraction(receptive_field - 1, 2)
        self.end_pad = padding if end_pad is None else end_pad
        self._reset_own_state()

    def is_ready(self, tick: int) -> bool:
        return tick >= self.delay and (tick - self.delay) % self.stride == 0

    @property
    def tick_count(self) -> int:
        return self._tick

    def _reset_own_state(self) -> None:
        self._tick = 0
        self._pads_left = self.end_pad
        self._shape: tuple | None = None
        self._reset_buffers()

    def _own_state(self) -> dict:
        return {"tick": self._tick, "pads_left": self._pads_left, "shape": self._shape,
                "buffers": self._buffer_state()}

    def _load_own_state(self, state: dict) -> None:
        self._tick = state["tick"]
        self._pads_left = state["pads_left"]
        self._shape = state["shape"]
        self._load_buffers(state["buffers"])

    def _step(self, x):
        if x is END:
            if self._shape is None:
                return END
            if self._pads_left == 0:
                t = self._tick
                self._tick += 1
                return END if self.is_ready(t) else None
            self._pads_left -= 1
            x = np.zeros(self._shape)
        else:
            self._check_step(x)
            if self._shape is None:
                self._shape = x.shape
                self._allocate(x)
            elif x.shape != self._shape:
                raise ShapeError(f"step shape {x.shape} differs from stream shape {self._shape}")
            self._pads_left = self.end_pad
        t = self._tick
        self._tick += 1
        return self._advance(x, self.is_ready(t))

    # subclass hooks
    def _check_step(self, x: np.ndarray) -> None:
        pass

    def _allocate(self, x: np.ndarray) -> None:
        pass

    def _advance(self, x: np.ndarray, ready: bool):
        raise NotImplementedError

    def _reset_buffers(self) -> None:
        pass

    def _buffer_state(self) -> Any:
        return None

    def _load_buffers(self, state: Any) -> None:
        pass
