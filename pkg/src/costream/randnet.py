"""Random network documents for property tests and ``costream check --random``.

Bounds: tree depth <= 6, branches <= 3, kernel_t <= 5, channels <= 4,
spatial extents <= 5, stride <= 3, and total receptive field <= 64.
Subtrees that fail to build (incompatible branch timing, shapes that
vanish) are redrawn.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CostreamError
from .netspec import InputSpec, NetSpecDoc, NodeSpec, build


@dataclass(frozen=True)
class Bounds:
    max_depth: int = 6
    max_branches: int = 3
    max_kernel_t: int = 5
    max_channels: int = 4
    max_spatial: int = 5
    max_stride: int = 3
    max_receptive_field: int = 64
    retries: int = 30


BOUNDS = Bounds()

_LAMBDAS = ("relu", "identity", "scale:0.5", "add:-0.25")
_LEAVES = ("conv", "avgpool", "maxpool", "linear", "delay", "lambda", "mha", "reshape")
_COMPOSITES = ("sequential", "broadcast_reduce", "residual", "conditional")


class _Gen:
    def __init__(self, rng: np.random.Generator, bounds: Bounds) -> None:
        self.rng = rng
        self.b = bounds

    def _int(self, lo: int, hi: int) -> int:
        return int(self.rng.integers(lo, hi + 1))

    def _stride(self, allow: bool) -> int:
        if not allow or self.rng.random() < 0.6:
            return 1
        return self._int(2, self.b.max_stride)

    def _window(self, shape: tuple, keep_shape: bool, allow_stride: bool) -> dict:
        k = self._int(1, self.b.max_kernel_t)
        p = {"kernel_t": k, "padding": self._int(0, k - 1), "stride": self._stride(allow_stride)}
        spatial = shape[1:]
        if spatial and self.rng.random() < 0.5:
            ks, ps, ss = [], [], []
            for n in spatial:
                if keep_shape:
                    kk = int(self.rng.choice([1, 3]))
                    ks.append(kk), ps.append(kk // 2), ss.append(1)
                else:
                    kk = self._int(1, min(3, n))
                    ks.append(kk), ps.append(self._int(0, kk - 1)), ss.append(self._int(1, 2))
            p.update(kernel_s=ks, padding_s=ps, stride_s=ss)
        return p

    def leaf(self, shape: tuple, keep_shape: bool, allow_stride: bool) -> NodeSpec:
        kind = str(self.rng.choice(_LEAVES))
        c = shape[0]
        if kind == "conv":
            return NodeSpec("conv", {"out_channels": self._int(1, self.b.max_channels),
                                     **self._window(shape, keep_shape, allow_stride),
                                     "bias": bool(self.rng.random() < 0.7)})
        if kind in ("avgpool", "maxpool"):
            return NodeSpec(kind, self._window(shape, keep_shape, allow_stride))
        if kind == "linear":
            return NodeSpec("linear", {"out_channels": self._int(1, self.b.max_channels),
                                       "bias": bool(self.rng.random() < 0.7)})
        if kind == "delay":
            return NodeSpec("delay", {"d": self._int(0, 3)})
        if kind == "mha" and len(shape) == 1:
            heads = int(self.rng.choice([h for h in range(1, c + 1) if c % h == 0]))
            return NodeSpec("mha", {"heads": heads, "window": self._int(1, self.b.max_kernel_t),
                                    "bias": bool(self.rng.random() < 0.7)})
        if kind == "reshape" and not keep_shape:
            if len(shape) == 1 and c <= self.b.max_spatial:
                return NodeSpec("reshape", {"shape": [1, c]})
            if len(shape) == 2 and c * shape[1] <= self.b.max_channels:
                return NodeSpec("reshape", {"shape": [c * shape[1]]})
        return NodeSpec("lambda", {"fn": str(self.rng.choice(_LAMBDAS))})

    def node(self, shape: tuple, depth: int, keep_shape: bool, allow_stride: bool) -> NodeSpec:
        chance = 0.85 if depth == 1 else 0.6 / depth
        composite = depth < self.b.max_depth and self.rng.random() < chance
        if not composite:
            return self.leaf(shape, keep_shape, allow_stride)
        # merging composites may wrap a branch in one extra level to fix its width
        kinds = _COMPOSITES if depth + 2 <= self.b.max_depth else ("sequential", "conditional")
        kind = str(self.rng.choice(kinds))
        if kind == "sequential":
            children = []
            for _ in range(self._int(2, 3)):
                child = self._valid(lambda s=shape: self.node(s, depth + 1, keep_shape, allow_stride), shape)
                children.append(child)
                shape = self.out_shape(child, shape)
            return NodeSpec("sequential", {"children": children})
        # merged paths keep the spatial layout so shapes can meet
        if kind == "broadcast_reduce":
            reduce = str(self.rng.choice(["sum", "concat", "mul", "max"]))
            width = self._int(1, self.b.max_channels)
            branches = []
            for _ in range(self._int(2, self.b.max_branches)):
                branches.append(self._valid(
                    lambda: self._fit_channels(self.node(shape, depth + 2, True, False), shape, width), shape))
            return NodeSpec("broadcast_reduce", {"branches": branches, "reduce": reduce})
        if kind == "residual":
            child = self._valid(
                lambda: self._fit_channels(self.node(shape, depth + 2, True, False), shape, shape[0]), shape)
            return NodeSpec("residual", {"child": child, "reduce": "sum",
                                         "residual_shrink": bool(self.rng.random() < 0.5)})
        then = self._valid(lambda: self.node(shape, depth + 1, True, False), shape)
        params = {"predicate": str(self.rng.choice(["always", "never", "even_tick", "odd_tick", "mean_positive"])),
                  "then": then}
        if self.rng.random() < 0.5:
            params["else"] = self._valid(lambda: self.node(shape, depth + 1, True, False), shape)
        return NodeSpec("conditional", params)

    def _fit_channels(self, node: NodeSpec, shape: tuple, width: int) -> NodeSpec:
        try:
            out = self.out_shape(node, shape)
        except CostreamError:
            return node
        if out[0] == width:
            return node
        return NodeSpec("sequential", {"children": [node, NodeSpec("linear", {"out_channels": width,
                                                                            "bias": True})]})

    def out_shape(self, node: NodeSpec, shape: tuple) -> tuple:
        m = build(NetSpecDoc(InputSpec(shape[0], tuple(shape[1:])), node))
        return m.out_shape((1,) + tuple(shape))[1:]

    def _valid(self, make, shape: tuple) -> NodeSpec:
        for _ in range(self.b.retries):
            node = make()
            try:
                m = build(NetSpecDoc(InputSpec(shape[0], tuple(shape[1:])), node))
                out = m.out_shape((1,) + tuple(shape))
            except CostreamError:
                continue
            if m.receptive_field <= self.b.max_receptive_field and max(out[1:]) <= max(
                    self.b.max_channels, self.b.max_spatial):
                return node
        return NodeSpec("lambda", {"fn": "identity"})


def random_doc(seed: int, bounds: Bounds = BOUNDS) -> NetSpecDoc:
    """A valid random document; the same seed always gives the same document."""
    rng = np.random.default_rng(seed)
    g = _Gen(rng, bounds)
    n_sp = int(rng.choice([0, 1, 2], p=[0.5, 0.3, 0.2]))
    shape = (g._int(1, bounds.max_channels),) + tuple(g._int(1, bounds.max_spatial) for _ in range(n_sp))
    net = g._valid(lambda: g.node(shape, 1, False, True), shape)
    return NetSpecDoc(InputSpec(shape[0], shape[1:]), net, seed)


def tree_depth(node: NodeSpec) -> int:
    return 1 + max((tree_depth(c) for _, c in node.child_nodes()), default=0)


def min_length(module, limit: int = 10_000) -> int:
    """Shortest clip for which batch mode yields an output."""
    for t in range(1, limit):
        if module.output_length(t) >= 1:
            return t
    raise ValueError("module needs clips longer than the search limit")
