"""FLOP and streaming-state accounting.

Conventions: a multiply-accumulate is 2 FLOPs; every other elementwise
operation (add, compare, exp, divide) is 1; bias additions are not
counted. ``flops_step`` is the cost of one tick that produces a ready
output; ``flops_forward`` is one batch forward over a clip of ``T`` steps.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from functools import singledispatch
from math import prod

import numpy as np

from .attention import SOFTMAX_FLOPS, MultiheadAttention
from .basic import Delay, Linear, Reshape
from .compose import Broadcast, Conditional, Parallel, Reduce, ReduceKind, Sequential
from .conv import Conv
from .core import CoModule, Lambda, ShapeError, count_flops
from .pool import Pool, PoolKind

FLOAT_BYTES = 8


@dataclass(frozen=True)
class CostReport:
    flops_forward: int
    flops_step: int
    state_bytes: int
    params_count: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class _Cost:
    forward: int
    step: int
    state: int
    out_shape: tuple
    out_len: int


def cost(module: CoModule, input_shape, t: int) -> CostReport:
    """Analytic cost of ``module`` for steps shaped ``input_shape`` = (B, C, S...)."""
    input_shape = tuple(input_shape)
    c = _cost(module, input_shape, t)
    return CostReport(c.forward, c.step, c.state, module.params_count())


def redundancy_ratio(module: CoModule, input_shape, t: int, per_prediction: bool = False) -> Fraction:
    """FLOPs of a sliding-window batch forward over ``t`` steps divided by
    the FLOPs of one continual step.

    With ``per_prediction`` the ratio is scaled by the prediction rate
    ``1 / stride``.
    """
    rep = cost(module, input_shape, t)
    ratio = Fraction(rep.flops_forward, rep.flops_step)
    return ratio / module.stride if per_prediction else ratio


@singledispatch
def _cost(module: CoModule, in_shape, t: int) -> _Cost:
    raise TypeError(f"no cost model for {type(module).__name__}")


def _require_len(module: CoModule, t: int) -> int:
    n = module.output_length(t)
    if n < 1:
        raise ShapeError(f"{module!r}: {t} steps yield no output")
    return n


@_cost.register
def _(m: Conv, in_shape, t):
    out = m.out_shape(in_shape)
    n = _require_len(m, t)
    b, c_in = in_shape[:2]
    column = 2 * b * m.out_channels * c_in * prod(m.kernel_size) * prod(out[2:])
    state = (m.receptive_field - 1) * prod(in_shape) * FLOAT_BYTES
    return _Cost(column * n, column, state, out, n)


@_cost.register
def _(m: Pool, in_shape, t):
    out = m.out_shape(in_shape)
    n = _require_len(m, t)
    elems = prod(out)
    window = prod(m.kernel_size)
    spatial = prod(m.kernel_size[1:])
    k = m.receptive_field
    if m.kind is PoolKind.AVG:
        fwd = elems * window * n
        # spatial sum, running-sum update, add current + divide
        step = elems * ((spatial - 1) + (4 if k > 1 else 1))
    else:
        fwd = elems * (window - 1) * n
        # spatial max, two nominal deque comparisons
        step = elems * ((spatial - 1) + (2 if k > 1 else 0))
    state = (k - 1) * elems * FLOAT_BYTES
    return _Cost(fwd, step, state, out, n)


@_cost.register
def _(m: Linear, in_shape, t):
    out = m.out_shape(in_shape)
    column = 2 * m.in_channels * prod(out)
    return _Cost(column * t, column, 0, out, t)


_LAMBDA_FLOPS = {"relu": 1, "identity": 0, "scale": 1, "add": 1}


@_cost.register
def _(m: Lambda, in_shape, t):
    out = m.out_shape(in_shape)
    per_elem = _LAMBDA_FLOPS.get(m.name.partition(":")[0], 0)
    column = per_elem * prod(in_shape)
    return _Cost(column * t, column, 0, out, t)


@_cost.register
def _(m: Delay, in_shape, t):
    return _Cost(0, 0, m.delay * prod(in_shape) * FLOAT_BYTES, tuple(in_shape), t)


@_cost.register
def _(m: Reshape, in_shape, t):
    return _Cost(0, 0, 0, m.out_shape(in_shape), t)


@_cost.register
def _(m: Broadcast, in_shape, t):
    return _Cost(0, 0, 0, m.out_shape(in_shape), t)


@_cost.register
def _(m: Reduce, in_shape, t):
    out = m.out_shape(in_shape)
    column = 0 if m.kind is ReduceKind.CONCAT else prod(out) * (len(in_shape) - 1)
    return _Cost(column * t, column, 0, out, t)


@_cost.register
def _(m: MultiheadAttention, in_shape, t):
    out = m.out_shape(in_shape)
    n_cols = _require_len(m, t)
    p = m.params
    b, e, n, h = in_shape[0], p.embed_dim, p.window, p.num_heads
    proj = 2 * b * e * e
    scores = b * h * n
    attend = 2 * scores * p.head_dim + SOFTMAX_FLOPS * scores + 2 * b * e * n
    step = 3 * proj + attend + proj
    fwd = 2 * proj * t + (proj + attend + proj) * n_cols
    state = 2 * (n - 1) * b * e * FLOAT_BYTES
    return _Cost(fwd, step, state, out, n_cols)


@_cost.register
def _(m: Sequential, in_shape, t):
    fwd = step = state = 0
    shape, length = in_shape, t
    for c in m.children():
        r = _cost(c, shape, length)
        fwd, step, state = fwd + r.forward, step + r.step, state + r.state
        shape, length = r.out_shape, r.out_len
    return _Cost(fwd, step, state, shape, length)


@_cost.register
def _(m: Parallel, in_shape, t):
    parts = [_cost(b, s, t) for b, s in zip(m.children(), in_shape)]
    n = _require_len(m, t)
    return _Cost(sum(r.forward for r in parts), sum(r.step for r in parts),
                 sum(r.state for r in parts), tuple(r.out_shape for r in parts), n)


@_cost.register
def _(m: Conditional, in_shape, t):
    a = _cost(m.then_module, in_shape, t)
    b = _cost(m.else_module, in_shape, t)
    return _Cost(a.forward + b.forward, a.step + b.step, a.state + b.state,
                 a.out_shape, a.out_len)


def measure(module: CoModule, input_shape, t: int, seed: int = 0, ticks: int | None = None) -> CostReport:
    """Cost observed by running the module with instrumented kernels.

    ``flops_step`` is taken from the ready ticks of a fresh stream; all of
    them must cost the same or ``ValueError`` is raised.
    """
    rng = np.random.default_rng(seed)
    input_shape = tuple(input_shape)
    clip = rng.standard_normal(input_shape[:2] + (t,) + input_shape[2:])
    with count_flops() as counter:
        module.forward(clip)
        fwd = counter.reset()
    ticks = ticks or max(t, module.delay + 4 * module.stride)
    stream = rng.standard_normal((ticks,) + input_shape)
    saved = module.get_state()
    module.clean_state()
    step_costs = set()
    try:
        with count_flops() as counter:
            for x in stream:
                y = module.forward_step(x)
                spent = counter.reset()
                if y is not None:
                    step_costs.add(spent)
        state = module.state_nbytes()
    finally:
        module.set_state(saved)
    if len(step_costs) != 1:
        raise ValueError(f"ready ticks had differing costs {sorted(step_costs)}")
    return CostReport(fwd, step_costs.pop(), state, module.params_count())
