"""Combinators that keep the timing of composed networks consistent.

Branch alignment is by window center: every module emits the output for
window center ``c`` at tick ``c + lag``, so branches are merged tick by tick
once their lags are equal. ``BroadcastReduce`` inserts the delays that make
them equal; batch mode crops each branch to the centers all branches share.
"""
from __future__ import annotations

import enum
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .basic import Delay, identity
from .core import (
    END,
    CoModule,
    ConstructionError,
    InsufficientLengthError,
    ShapeError,
    Stateless,
    tally,
)


class ReduceKind(str, enum.Enum):
    SUM = "sum"
    CONCAT = "concat"
    MUL = "mul"
    MAX = "max"


class Sequential(CoModule):
    def __init__(self, *children: CoModule) -> None:
        super().__init__()
        if len(children) == 1 and isinstance(children[0], (list, tuple)):
            children = tuple(children[0])
        if not children:
            raise ConstructionError("Sequential needs at least one child")
        self._children = list(children)
        for a, b in zip(children, children[1:]):
            out_c = getattr(a, "out_channels", None)
            in_c = getattr(b, "in_channels", None)
            if out_c is not None and in_c is not None and out_c != in_c:
                raise ConstructionError(
                    f"{a!r} emits {out_c} channels but {b!r} expects {in_c}"
                )
        first = children[0]
        f, d, s, lag = first.receptive_field, first.delay, first.stride, first.lag
        for c in children[1:]:
            f += (c.receptive_field - 1) * s
            d += c.delay * s
            lag += c.lag * s
            s *= c.stride
        self.receptive_field, self.delay, self.stride, self.lag = f, d, s, Fraction(lag)

    def children(self):
        return self._children

    def __getitem__(self, i):
        return self._children[i]

    def __len__(self) -> int:
        return len(self._children)

    def output_length(self, t: int) -> int:
        for c in self._children:
            t = c.output_length(t)
            if t < 1:
                return t
        return t

    def out_shape(self, in_shape):
        for c in self._children:
            in_shape = c.out_shape(in_shape)
        return in_shape

    def _forward(self, x):
        for c in self._children:
            x = c.forward(x)
        return x

    def _step(self, x):
        for c in self._children:
            x = c.forward_step(x)
            if x is None:
                return None
        return x

    def __repr__(self) -> str:
        return "Sequential(" + ", ".join(map(repr, self._children)) + ")"


class Broadcast(Stateless):
    """Duplicate one stream into ``n`` parallel streams."""

    def __init__(self, n: int) -> None:
        super().__init__()
        if n < 1:
            raise ConstructionError("Broadcast needs n >= 1")
        self.n = n

    def _apply_step(self, x):
        if isinstance(x, tuple):
            raise ShapeError("Broadcast expects a single stream")
        return (x,) * self.n

    def _apply_clip(self, x):
        return self._apply_step(x)

    def out_shape(self, in_shape):
        return (tuple(in_shape),) * self.n

    def __repr__(self) -> str:
        return f"Broadcast({self.n})"


def _check_streams(x, n: int, who: str) -> None:
    if not isinstance(x, tuple) or len(x) != n:
        got = len(x) if isinstance(x, tuple) else 1
        raise ShapeError(f"{who} expects {n} streams, got {got}")


class Parallel(CoModule):
    """Apply branch ``i`` to stream ``i`` on a shared clock.

    Branches must have equal stride and equal lag; the output is empty
    unless every branch is ready.
    """

    def __init__(self, *branches: CoModule) -> None:
        super().__init__()
        if len(branches) == 1 and isinstance(branches[0], (list, tuple)):
            branches = tuple(branches[0])
        if not branches:
            raise ConstructionError("Parallel needs at least one branch")
        self._branches = list(branches)
        strides = {b.stride for b in branches}
        if len(strides) != 1:
            raise ConstructionError(f"parallel branches have unequal strides {sorted(strides)}")
        lags = {b.lag for b in branches}
        if len(lags) != 1:
            raise ConstructionError(
                f"parallel branches have unequal lags {sorted(map(str, lags))}; align them with Delay"
            )
        s = strides.pop()
        offsets = [b.offset for b in branches]
        if any((o - offsets[0]) % s for o in offsets):
            raise ConstructionError("parallel branch outputs never coincide on the shared clock")
        self.stride = s
        self.lag = lags.pop()
        self.delay = max(b.delay for b in branches)
        self.receptive_field = max(b.receptive_field for b in branches)

    def children(self):
        return self._branches

    def _crop(self, lengths: Sequence[int]) -> list[tuple[int, int]]:
        """Per-branch (start, count) of batch columns with shared centers."""
        s = self.stride
        firsts = [b.offset for b in self._branches]
        lasts = [o + (n - 1) * s for o, n in zip(firsts, lengths)]
        lo, hi = max(firsts), min(lasts)
        count = int((hi - lo) // s) + 1 if hi >= lo else 0
        return [(int((lo - o) // s), count) for o in firsts]

    def output_length(self, t: int) -> int:
        lengths = [b.output_length(t) for b in self._branches]
        if min(lengths) < 1:
            return min(lengths)
        return self._crop(lengths)[0][1]

    def out_shape(self, in_shape):
        n = len(self._branches)
        if not isinstance(in_shape, tuple) or len(in_shape) != n or not all(
            isinstance(s, tuple) for s in in_shape
        ):
            raise ShapeError(f"Parallel expects {n} stream shapes, got {in_shape}")
        return tuple(b.out_shape(s) for b, s in zip(self._branches, in_shape))

    def _forward(self, x):
        _check_streams(x, len(self._branches), "Parallel")
        ys = [b.forward(xi) for b, xi in zip(self._branches, x)]
        crops = self._crop([y.shape[2] for y in ys])
        if crops[0][1] < 1:
            raise InsufficientLengthError("parallel branches share no output columns")
        return tuple(y[:, :, a:a + n] for y, (a, n) in zip(ys, crops))

    def _step(self, x):
        n = len(self._branches)
        if x is END:
            outs = [b.forward_step(END) for b in self._branches]
        else:
            _check_streams(x, n, "Parallel")
            outs = [b.forward_step(xi) for b, xi in zip(self._branches, x)]
        # Once one branch is exhausted no merged output can follow; ending
        # now keeps downstream end padding on the shared clock.
        if any(y is END for y in outs):
            return END
        if any(y is None for y in outs):
            return None
        return tuple(outs)

    def __repr__(self) -> str:
        return "Parallel(" + ", ".join(map(repr, self._branches)) + ")"


class Reduce(Stateless):
    """Merge parallel streams into one."""

    def __init__(self, kind: ReduceKind | str = ReduceKind.SUM) -> None:
        super().__init__()
        self.kind = ReduceKind(kind)

    def _merge(self, xs):
        if self.kind is ReduceKind.CONCAT:
            return np.concatenate(xs, axis=1)
        shapes = {x.shape for x in xs}
        if len(shapes) != 1:
            raise ShapeError(f"{self.kind.value} reduce needs equal shapes, got {sorted(shapes)}")
        y = xs[0].copy()
        for x in xs[1:]:
            if self.kind is ReduceKind.SUM:
                y += x
            elif self.kind is ReduceKind.MUL:
                y *= x
            else:
                np.maximum(y, x, out=y)
        tally(y.size * (len(xs) - 1))
        return y

    def _step(self, x):
        if x is END:
            return END
        if not isinstance(x, tuple):
            raise ShapeError("Reduce expects parallel streams")
        if any(v is None for v in x):
            return None
        return self._merge(list(x))

    def _forward(self, x):
        if not isinstance(x, tuple):
            raise ShapeError("Reduce expects parallel streams")
        return self._merge(list(x))

    def out_shape(self, in_shape):
        if not isinstance(in_shape, tuple) or not all(isinstance(s, tuple) for s in in_shape):
            raise ShapeError("Reduce expects parallel stream shapes")
        if self.kind is ReduceKind.CONCAT:
            rest = {(s[0],) + s[2:] for s in in_shape}
            if len(rest) != 1:
                raise ShapeError(f"concat needs equal non-channel shapes, got {in_shape}")
            first = in_shape[0]
            return (first[0], sum(s[1] for s in in_shape)) + tuple(first[2:])
        if len(set(in_shape)) != 1:
            raise ShapeError(f"{self.kind.value} reduce needs equal shapes, got {in_shape}")
        return in_shape[0]

    def __repr__(self) -> str:
        return f"Reduce({self.kind.value!r})"


def _align(branch: CoModule, extra: int) -> CoModule:
    if extra == 0:
        return branch
    # A delay after a strided branch would count in its slower clock.
    if branch.stride == 1:
        return Sequential(branch, Delay(extra))
    return Sequential(Delay(extra), branch)


class BroadcastReduce(Sequential):
    """Broadcast, apply branches in parallel, reduce.

    Branches with a smaller lag are delayed until all lags match.
    """

    def __init__(self, *branches: CoModule, reduce: ReduceKind | str = ReduceKind.SUM) -> None:
        if len(branches) == 1 and isinstance(branches[0], (list, tuple)):
            branches = tuple(branches[0])
        if not branches:
            raise ConstructionError("BroadcastReduce needs at least one branch")
        top = max(b.lag for b in branches)
        aligned = []
        for b in branches:
            extra = top - b.lag
            if extra.denominator != 1:
                raise ConstructionError(
                    f"cannot align {b!r}: lag differs from {top} by a fractional step"
                )
            aligned.append(_align(b, int(extra)))
        self.branches = list(branches)
        self.reduce = ReduceKind(reduce)
        super().__init__(Broadcast(len(aligned)), Parallel(aligned), Reduce(self.reduce))


class Residual(BroadcastReduce):
    """Add the (aligned) input to the output of ``module``.

    With ``residual_shrink`` the identity path is cropped to the window
    centers of an unpadded ``module`` (odd receptive field required);
    otherwise ``module`` must preserve the temporal length.
    """

    def __init__(self, module: CoModule, reduce: ReduceKind | str = ReduceKind.SUM,
                 residual_shrink: bool = False) -> None:
        if residual_shrink:
            if module.receptive_field % 2 == 0:
                raise ConstructionError(
                    "residual_shrink needs an odd receptive field to crop on center"
                )
        elif module.offset != 0 or module.stride != 1:
            raise ConstructionError(
                "residual over a length-changing module requires residual_shrink=True"
            )
        self.module = module
        self.residual_shrink = residual_shrink
        super().__init__(module, identity(), reduce=reduce)


Predicate = Callable[[np.ndarray, int], bool]

PREDICATES: dict[str, Predicate] = {
    "always": lambda x, t: True,
    "never": lambda x, t: False,
    "even_tick": lambda x, t: t % 2 == 0,
    "odd_tick": lambda x, t: t % 2 == 1,
    "mean_positive": lambda x, t: bool(np.mean(x) > 0),
}


class Conditional(CoModule):
    """Choose, per tick, between the outputs of two modules.

    ``predicate(step, tick)`` sees the incoming step and this module's tick
    index. Both branches consume every step so each keeps a valid history.
    """

    def __init__(self, predicate: Predicate | str, then_module: CoModule,
                 else_module: CoModule | None = None) -> None:
        super().__init__()
        if isinstance(predicate, str):
            try:
                predicate = PREDICATES[predicate]
            except KeyError:
                raise ConstructionError(f"unknown predicate {predicate!r}") from None
        if else_module is None:
            else_module = Delay(then_module.delay)
        for attr in ("delay", "stride", "lag"):
            a, b = getattr(then_module, attr), getattr(else_module, attr)
            if a != b:
                raise ConstructionError(f"conditional branches differ in {attr}: {a} vs {b}")
        self.predicate = predicate
        self.then_module = then_module
        self.else_module = else_module
        self.receptive_field = max(then_module.receptive_field, else_module.receptive_field)
        self.delay, self.stride, self.lag = then_module.delay, then_module.stride, then_module.lag
        self._reset_own_state()

    def children(self):
        return [self.then_module, self.else_module]

    def _reset_own_state(self):
        self._tick = 0
        self._shape = None

    def _own_state(self):
        return {"tick": self._tick, "shape": self._shape}

    def _load_own_state(self, state):
        self._tick, self._shape = state["tick"], state["shape"]

    def output_length(self, t: int) -> int:
        a, b = self.then_module.output_length(t), self.else_module.output_length(t)
        return a if a == b else min(a, b, 0)

    def out_shape(self, in_shape):
        a, b = self.then_module.out_shape(in_shape), self.else_module.out_shape(in_shape)
        if a != b:
            raise ShapeError(f"conditional branches produce {a} and {b}")
        return a

    def _forward(self, x):
        a, b = self.then_module.forward(x), self.else_module.forward(x)
        if a.shape != b.shape:
            raise ShapeError(f"conditional branches produce {a.shape} and {b.shape}")
        zero = np.zeros(x.shape[:2] + x.shape[3:])
        out = b.copy()
        for j in range(a.shape[2]):
            t = self.delay + j * self.stride
            col = x[:, :, t] if t < x.shape[2] else zero
            if self.predicate(col, t):
                out[:, :, j] = a[:, :, j]
        return out

    def _step(self, x):
        if x is END:
            if self._shape is None:
                return END
            col = np.zeros(self._shape)
        else:
            self._shape = x.shape
            col = x
        t = self._tick
        self._tick += 1
        a = self.then_module.forward_step(x)
        b = self.else_module.forward_step(x)
        if a is END or b is END:
            return END
        return a if self.predicate(col, t) else b

    def __repr__(self) -> str:
        return f"Conditional({self.then_module!r}, {self.else_module!r})"


def broadcast(n: int) -> Broadcast:
    return Broadcast(n)


def parallel(*branches: CoModule) -> Parallel:
    return Parallel(*branches)


def reduce(kind: ReduceKind | str = ReduceKind.SUM) -> Reduce:
    return Reduce(kind)


def sequential(*children: CoModule) -> Sequential:
    return Sequential(*children)


def broadcast_reduce(*branches: CoModule, reduce: ReduceKind | str = ReduceKind.SUM) -> BroadcastReduce:
    return BroadcastReduce(*branches, reduce=reduce)


def residual(module: CoModule, reduce: ReduceKind | str = ReduceKind.SUM,
             residual_shrink: bool = False) -> Residual:
    return Residual(module, reduce, residual_shrink)


def conditional(predicate: Predicate | str, then_module: CoModule,
                else_module: CoModule | None = None) -> Conditional:
    return Conditional(predicate, then_module, else_module)
