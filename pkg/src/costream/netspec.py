"""Declarative network descriptions: parse, validate, serialize, build.

A document is JSON::

    {"input": {"channels": 1, "spatial": []},
     "seed": 0,
     "net": {"type": "sequential", "params": {"children": [...]}}}

Every node has a ``type``, a ``params`` object and, for nodes that carry
parameters (conv, linear, mha), an optional ``weights`` object that is
either ``{"seed": n}`` or ``{"file": prefix}``. Nodes without ``weights``
draw from the document seed. Validation errors name the offending key
as a path such as ``net.children[0].params.padding``; child nodes are
addressed directly under their parent (``net.branches[1]``, ``net.child``).
"""
from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .attention import MhaParams, MultiheadAttention
from .basic import Delay, Linear, Reshape, lambda_from_name
from .compose import PREDICATES, BroadcastReduce, Conditional, ReduceKind, Residual, Sequential
from .conv import Conv
from .core import CoModule, ConstructionError, CostreamError
from .pool import AvgPool, MaxPool

U64 = (1 << 64) - 1


class NetSpecError(CostreamError):
    """Invalid document; ``path`` locates the offending key."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class NetSpecSyntaxError(NetSpecError):
    def __init__(self, line: int, column: int, message: str) -> None:
        super().__init__(f"line {line}, column {column}", message)
        self.line = line
        self.column = column


class WeightFileError(NetSpecError):
    """Weight file missing, corrupt, or of the wrong shape."""


# ---------------------------------------------------------------------------
# document model


@dataclass(frozen=True)
class InputSpec:
    channels: int
    spatial: tuple[int, ...] = ()

    def step_shape(self, batch: int = 1) -> tuple[int, ...]:
        return (batch, self.channels) + self.spatial


@dataclass
class NodeSpec:
    type: str
    params: dict[str, Any] = field(default_factory=dict)
    weights: dict[str, Any] | None = None

    def child_nodes(self) -> Iterator[tuple[str, "NodeSpec"]]:
        """(relative path, node) pairs of direct children, in pre-order."""
        for key in ("children", "branches"):
            for i, c in enumerate(self.params.get(key) or ()):
                yield f"{key}[{i}]", c
        for key in ("child", "then", "else"):
            if isinstance(self.params.get(key), NodeSpec):
                yield key, self.params[key]


@dataclass
class NetSpecDoc:
    input: InputSpec
    net: NodeSpec
    seed: int = 0


def walk(node: NodeSpec, path: str = "net") -> Iterator[tuple[str, NodeSpec]]:
    """Pre-order traversal yielding (path, node)."""
    yield path, node
    for rel, child in node.child_nodes():
        yield from walk(child, f"{path}.{rel}")


# ---------------------------------------------------------------------------
# schema

_INT, _BOOL, _STR, _INTS, _NODE, _NODES = "int", "bool", "str", "ints", "node", "nodes"

# key -> (kind, default, minimum); default ``...`` marks the key required
_WINDOW = {
    "kernel_t": (_INT, ..., 1),
    "padding": (_INT, 0, 0),
    "stride": (_INT, 1, 1),
    "kernel_s": (_INTS, None, 1),
    "padding_s": (_INTS, None, 0),
    "stride_s": (_INTS, None, 1),
}

SCHEMA: dict[str, dict[str, tuple]] = {
    "conv": {"out_channels": (_INT, ..., 1), **_WINDOW, "bias": (_BOOL, True, None)},
    "avgpool": dict(_WINDOW),
    "maxpool": dict(_WINDOW),
    "linear": {"out_channels": (_INT, ..., 1), "bias": (_BOOL, True, None)},
    "delay": {"d": (_INT, ..., 0)},
    "reshape": {"shape": (_INTS, ..., 1)},
    "lambda": {"fn": (_STR, ..., None)},
    "mha": {"heads": (_INT, ..., 1), "window": (_INT, ..., 1), "bias": (_BOOL, True, None)},
    "sequential": {"children": (_NODES, ..., None)},
    "broadcast_reduce": {"branches": (_NODES, ..., None), "reduce": (_STR, "sum", None)},
    "residual": {"child": (_NODE, ..., None), "reduce": (_STR, "sum", None),
                 "residual_shrink": (_BOOL, False, None)},
    "conditional": {"predicate": (_STR, ..., None), "then": (_NODE, ..., None),
                    "else": (_NODE, None, None)},
}

WEIGHTED = ("conv", "linear", "mha")


def _type_name(v: Any) -> str:
    return {bool: "boolean", int: "integer", float: "number", str: "string",
            list: "array", dict: "object", type(None): "null"}.get(type(v), type(v).__name__)


def _expect_object(v: Any, path: str) -> dict:
    if not isinstance(v, dict):
        raise NetSpecError(path, f"expected an object, got {_type_name(v)}")
    return v


def _check_keys(obj: dict, allowed, path: str) -> None:
    for k in obj:
        if k not in allowed:
            raise NetSpecError(f"{path}.{k}", f"unknown key; expected one of {sorted(allowed)}")


def _int(v: Any, path: str, minimum: int | None = 0, maximum: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise NetSpecError(path, f"expected an integer, got {_type_name(v)}")
    if minimum is not None and v < minimum:
        raise NetSpecError(path, f"must be >= {minimum}, got {v}")
    if maximum is not None and v > maximum:
        raise NetSpecError(path, f"must be <= {maximum}, got {v}")
    return v


def _ints(v: Any, path: str, minimum: int) -> tuple[int, ...]:
    if not isinstance(v, list):
        raise NetSpecError(path, f"expected an array of integers, got {_type_name(v)}")
    return tuple(_int(x, f"{path}[{i}]", minimum) for i, x in enumerate(v))


def _node(raw: Any, path: str) -> NodeSpec:
    raw = _expect_object(raw, path)
    _check_keys(raw, ("type", "params", "weights"), path)
    if "type" not in raw:
        raise NetSpecError(f"{path}.type", "missing required key")
    kind = raw["type"]
    if kind not in SCHEMA:
        raise NetSpecError(f"{path}.type", f"unknown node type {kind!r}; expected one of {sorted(SCHEMA)}")
    schema = SCHEMA[kind]
    raw_params = _expect_object(raw.get("params", {}), f"{path}.params")
    _check_keys(raw_params, schema, f"{path}.params")
    params: dict[str, Any] = {}
    for key, (vkind, default, minimum) in schema.items():
        # child nodes are addressed without the "params" segment
        p = f"{path}.{key}" if vkind in (_NODE, _NODES) else f"{path}.params.{key}"
        if key not in raw_params:
            if default is ...:
                raise NetSpecError(p, "missing required key")
            if default is not None:
                params[key] = default
            continue
        v = raw_params[key]
        if vkind == _INT:
            params[key] = _int(v, p, minimum)
        elif vkind == _BOOL:
            if not isinstance(v, bool):
                raise NetSpecError(p, f"expected a boolean, got {_type_name(v)}")
            params[key] = v
        elif vkind == _STR:
            if not isinstance(v, str):
                raise NetSpecError(p, f"expected a string, got {_type_name(v)}")
            params[key] = v
        elif vkind == _INTS:
            params[key] = list(_ints(v, p, minimum))
        elif vkind == _NODE:
            params[key] = _node(v, p)
        else:
            if not isinstance(v, list):
                raise NetSpecError(p, f"expected an array of nodes, got {_type_name(v)}")
            if not v:
                raise NetSpecError(p, "must contain at least one node")
            params[key] = [_node(c, f"{p}[{i}]") for i, c in enumerate(v)]
    _check_ranges(kind, params, f"{path}.params")
    weights = None
    if "weights" in raw:
        if kind not in WEIGHTED:
            raise NetSpecError(f"{path}.weights", f"node type {kind!r} has no weights")
        weights = _weights(raw["weights"], f"{path}.weights")
    return NodeSpec(kind, params, weights)


def _check_ranges(kind: str, params: dict, path: str) -> None:
    if "kernel_t" in params and params["padding"] > params["kernel_t"] - 1:
        raise NetSpecError(f"{path}.padding",
                           f"must be <= kernel_t - 1 = {params['kernel_t'] - 1}, got {params['padding']}")
    ks = params.get("kernel_s")
    for key in ("padding_s", "stride_s"):
        if key in params:
            if ks is None:
                raise NetSpecError(f"{path}.{key}", "requires kernel_s")
            if len(params[key]) != len(ks):
                raise NetSpecError(f"{path}.{key}", f"needs {len(ks)} entries, got {len(params[key])}")
    for i, (p, k) in enumerate(zip(params.get("padding_s", ()), ks or ())):
        if p > k - 1:
            raise NetSpecError(f"{path}.padding_s[{i}]", f"must be <= {k - 1}, got {p}")
    if kind == "reshape" and not params["shape"]:
        raise NetSpecError(f"{path}.shape", "must not be empty")
    if kind == "lambda":
        try:
            lambda_from_name(params["fn"])
        except ConstructionError as e:
            raise NetSpecError(f"{path}.fn", str(e)) from None
    if "reduce" in params and params["reduce"] not in {r.value for r in ReduceKind}:
        raise NetSpecError(f"{path}.reduce",
                           f"unknown reduce {params['reduce']!r}; expected one of "
                           f"{sorted(r.value for r in ReduceKind)}")
    if kind == "conditional" and params["predicate"] not in PREDICATES:
        raise NetSpecError(f"{path}.predicate",
                           f"unknown predicate {params['predicate']!r}; expected one of {sorted(PREDICATES)}")


def _weights(raw: Any, path: str) -> dict:
    raw = _expect_object(raw, path)
    _check_keys(raw, ("seed", "file"), path)
    if len(raw) != 1:
        raise NetSpecError(path, "expected exactly one of 'seed' or 'file'")
    if "seed" in raw:
        return {"seed": _int(raw["seed"], f"{path}.seed", 0, U64)}
    if not isinstance(raw["file"], str) or not raw["file"]:
        raise NetSpecError(f"{path}.file", "expected a non-empty string")
    return {"file": raw["file"]}


def _reject_constant(name: str):
    raise ValueError(f"non-standard number {name}")


def _pairs(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _loads(text: str) -> Any:
    try:
        return json.loads(text, parse_constant=_reject_constant, object_pairs_hook=_pairs)
    except json.JSONDecodeError as e:
        raise NetSpecSyntaxError(e.lineno, e.colno, e.msg) from None
    except ValueError as e:
        raise NetSpecSyntaxError(0, 0, str(e)) from None


def parse(text: str | bytes) -> NetSpecDoc:
    """Parse and validate a document."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise NetSpecSyntaxError(0, e.start, "input is not valid UTF-8") from None
    raw = _expect_object(_loads(text), "document")
    _check_keys(raw, ("input", "net", "seed"), "document")
    for key in ("input", "net"):
        if key not in raw:
            raise NetSpecError(key, "missing required key")
    inp = _expect_object(raw["input"], "input")
    _check_keys(inp, ("channels", "spatial"), "input")
    if "channels" not in inp:
        raise NetSpecError("input.channels", "missing required key")
    channels = _int(inp["channels"], "input.channels", 1)
    spatial = _ints(inp.get("spatial", []), "input.spatial", 1)
    seed = _int(raw.get("seed", 0), "seed", 0, U64)
    return NetSpecDoc(InputSpec(channels, spatial), _node(raw["net"], "net"), seed)


def load(path: str | Path) -> NetSpecDoc:
    return parse(Path(path).read_bytes())


def _node_to_obj(node: NodeSpec) -> dict:
    params = {}
    for key, v in node.params.items():
        if isinstance(v, NodeSpec):
            v = _node_to_obj(v)
        elif isinstance(v, list) and v and isinstance(v[0], NodeSpec):
            v = [_node_to_obj(c) for c in v]
        params[key] = v
    obj: dict[str, Any] = {"type": node.type, "params": params}
    if node.weights is not None:
        obj["weights"] = dict(node.weights)
    return obj


def to_obj(doc: NetSpecDoc) -> dict:
    return {
        "input": {"channels": doc.input.channels, "spatial": list(doc.input.spatial)},
        "seed": doc.seed,
        "net": _node_to_obj(doc.net),
    }


def serialize(doc: NetSpecDoc) -> str:
    """Canonical text: every defaulted key spelled out, two-space indent."""
    return json.dumps(to_obj(doc), indent=2) + "\n"


# ---------------------------------------------------------------------------
# deterministic weights


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & U64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & U64
    return state, z ^ (z >> 31)


def node_seed(seed: int, index: int) -> int:
    """Sub-seed of the node at pre-order ``index``."""
    _, out = splitmix64(seed ^ ((index * 0xD1B54A32D192ED03) & U64))
    return out


def uniform_stream(seed: int, n: int) -> np.ndarray:
    """``n`` values in [-1, 1) from the high 53 bits of splitmix64 outputs."""
    out = np.empty(n)
    state = seed
    for i in range(n):
        state, z = splitmix64(state)
        out[i] = (z >> 11) * (2.0 ** -53) * 2.0 - 1.0
    return out


def seeded_params(seed: int, shapes: dict[str, tuple[int, ...]]) -> dict[str, np.ndarray]:
    """Fill ``shapes`` in order, row-major, from one stream."""
    total = sum(int(np.prod(s)) for s in shapes.values())
    flat = uniform_stream(seed, total)
    out, i = {}, 0
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        out[name] = flat[i:i + n].reshape(shape)
        i += n
    return out


# ---------------------------------------------------------------------------
# weight files

COWT_MAGIC = b"COWT"
COWT_VERSION = 1


def write_cowt(path: str | Path, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array, dtype="<f8")
    head = COWT_MAGIC + struct.pack("<II", COWT_VERSION, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    Path(path).write_bytes(head + a.tobytes())


def read_cowt(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise WeightFileError(str(path), f"cannot read weight file ({e.strerror})") from None
    if len(data) < 12 or data[:4] != COWT_MAGIC:
        raise WeightFileError(str(path), "not a COWT weight file")
    version, rank = struct.unpack_from("<II", data, 4)
    if version != COWT_VERSION:
        raise WeightFileError(str(path), f"unsupported version {version}")
    head = 12 + 8 * rank
    if len(data) < head:
        raise WeightFileError(str(path), "truncated header")
    dims = struct.unpack_from(f"<{rank}Q", data, 12)
    count = int(np.prod(dims))
    if len(data) - head != 8 * count:
        raise WeightFileError(str(path), f"expected {count} values for shape {dims}, "
                                         f"found {(len(data) - head) / 8:g}")
    return np.frombuffer(data, dtype="<f8", offset=head).reshape(dims).astype(np.float64)


def weight_prefix(path: str) -> str:
    """File-name prefix for the node at ``path``: ``net.children[0]`` -> ``net.children.0``."""
    return re.sub(r"\[(\d+)\]", r".\1", path)


# ---------------------------------------------------------------------------
# build


def _param_shapes(node: NodeSpec, in_shape: tuple) -> dict[str, tuple[int, ...]]:
    p = node.params
    c_in = in_shape[1]
    if node.type == "conv":
        ks = tuple(p.get("kernel_s") or (1,) * (len(in_shape) - 2))
        shapes = {"kernel": (p["out_channels"], c_in, p["kernel_t"]) + ks}
        if p["bias"]:
            shapes["bias"] = (p["out_channels"],)
        return shapes
    if node.type == "linear":
        shapes = {"weight": (p["out_channels"], c_in)}
        if p["bias"]:
            shapes["bias"] = (p["out_channels"],)
        return shapes
    e = c_in
    shapes = {k: (e, e) for k in ("w_q", "w_k", "w_v", "w_o")}
    if p["bias"]:
        shapes.update({k: (e,) for k in ("b_q", "b_k", "b_v", "b_o")})
    return shapes


@dataclass
class _BuildContext:
    seed: int
    base_dir: Path
    index: int = 0
    modules: dict = field(default_factory=dict)


def _materialize(node: NodeSpec, in_shape: tuple, path: str, index: int,
                 ctx: _BuildContext) -> dict[str, np.ndarray]:
    shapes = _param_shapes(node, in_shape)
    w = node.weights
    if w is None or "seed" in w:
        base = ctx.seed if w is None else w["seed"]
        return seeded_params(node_seed(base, index), shapes)
    out = {}
    for name, shape in shapes.items():
        f = ctx.base_dir / f"{w['file']}.{name}.cowt"
        a = read_cowt(f)
        if a.shape != shape:
            raise WeightFileError(f"{path}.weights.file",
                                  f"{f.name} holds shape {a.shape}, expected {shape}")
        out[name] = a
    return out


def _window_kwargs(p: dict, n_sp: int, path: str) -> dict:
    ks = p.get("kernel_s")
    if ks is not None and len(ks) != n_sp:
        raise NetSpecError(f"{path}.params.kernel_s",
                           f"input has {n_sp} spatial axes, got {len(ks)} extents")
    return dict(kernel_size=(p["kernel_t"],) + tuple(ks or (1,) * n_sp), padding=p["padding"],
                stride=p["stride"], spatial_padding=p.get("padding_s"), spatial_stride=p.get("stride_s"))


def _build(node: NodeSpec, in_shape: tuple, path: str, ctx: _BuildContext) -> CoModule:
    index = ctx.index
    ctx.index += 1
    p = node.params
    n_sp = len(in_shape) - 2
    try:
        if node.type in ("conv", "linear", "mha"):
            params = _materialize(node, in_shape, path, index, ctx)
        if node.type == "conv":
            kw = _window_kwargs(p, n_sp, path)
            m = Conv(in_shape[1], p["out_channels"], kernel=params["kernel"],
                     bias=params.get("bias", False), **kw)
        elif node.type in ("avgpool", "maxpool"):
            kw = _window_kwargs(p, n_sp, path)
            m = (AvgPool if node.type == "avgpool" else MaxPool)(**kw)
        elif node.type == "linear":
            m = Linear(in_shape[1], p["out_channels"], params["weight"], params.get("bias", False))
        elif node.type == "delay":
            m = Delay(p["d"])
        elif node.type == "reshape":
            m = Reshape(p["shape"])
        elif node.type == "lambda":
            m = lambda_from_name(p["fn"])
        elif node.type == "mha":
            if n_sp:
                raise NetSpecError(f"{path}.type", f"mha needs steps without spatial axes, got {in_shape[1:]}")
            if in_shape[1] % p["heads"]:
                raise NetSpecError(f"{path}.params.heads",
                                   f"embedding size {in_shape[1]} not divisible by {p['heads']} heads")
            m = MultiheadAttention(MhaParams(in_shape[1], p["heads"], p["window"], **params))
        elif node.type == "sequential":
            children, shape = [], in_shape
            for i, c in enumerate(p["children"]):
                cm = _build(c, shape, f"{path}.children[{i}]", ctx)
                shape = cm.out_shape(shape)
                children.append(cm)
            m = Sequential(children)
        elif node.type == "broadcast_reduce":
            branches = [_build(c, in_shape, f"{path}.branches[{i}]", ctx)
                        for i, c in enumerate(p["branches"])]
            m = BroadcastReduce(branches, reduce=p["reduce"])
        elif node.type == "residual":
            child = _build(p["child"], in_shape, f"{path}.child", ctx)
            m = Residual(child, p["reduce"], p["residual_shrink"])
        else:
            then = _build(p["then"], in_shape, f"{path}.then", ctx)
            other = _build(p["else"], in_shape, f"{path}.else", ctx) if "else" in p else None
            m = Conditional(p["predicate"], then, other)
        m.out_shape(in_shape)
    except NetSpecError:
        raise
    except CostreamError as e:
        raise NetSpecError(path, str(e)) from None
    ctx.modules[path] = m
    return m


def build(doc: NetSpecDoc, base_dir: str | Path = ".", modules: dict | None = None) -> CoModule:
    """Materialize the module tree of ``doc``.

    Weight-file prefixes are resolved against ``base_dir``. If ``modules``
    is given it receives a ``{node path: module}`` map.
    """
    ctx = _BuildContext(doc.seed, Path(base_dir))
    m = _build(doc.net, doc.input.step_shape(), "net", ctx)
    if modules is not None:
        modules.update(ctx.modules)
    return m


def export_weights(doc: NetSpecDoc, directory: str | Path, base_dir: str | Path = ".") -> NetSpecDoc:
    """Write every node's weights as COWT files into ``directory``.

    Returns a copy of ``doc`` whose weighted nodes reference those files;
    build it with ``base_dir=directory``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    modules: dict[str, CoModule] = {}
    build(doc, base_dir, modules)
    doc = parse(serialize(doc))  # deep copy
    for path, node in walk(doc.net):
        if node.type not in WEIGHTED:
            continue
        prefix = weight_prefix(path)
        for name, a in modules[path].parameters().items():
            write_cowt(directory / f"{prefix}.{name}.cowt", a)
        node.weights = {"file": prefix}
    return doc


def worked_example(seed: int = 0) -> NetSpecDoc:
    """Two temporal convolutions: (k=3, p=2, s=2) then (k=3, p=0, s=1)."""
    def conv(p, s):
        return NodeSpec("conv", {"out_channels": 1, "kernel_t": 3, "padding": p, "stride": s, "bias": True})
    return NetSpecDoc(InputSpec(1, ()), NodeSpec("sequential", {"children": [conv(2, 2), conv(0, 1)]}), seed)


def with_seed(doc: NetSpecDoc, seed: int) -> NetSpecDoc:
    return replace(doc, seed=seed)
