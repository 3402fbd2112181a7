"""Continual inference engine: streaming operators with batch-equivalent step outputs."""
from .attention import MhaParams, MultiheadAttention, mha_forward
from .basic import Add, Delay, Linear, Multiply, Reshape, identity, lambda_from_name, relu, scale
from .compose import (
    Broadcast,
    BroadcastReduce,
    Conditional,
    Parallel,
    Reduce,
    ReduceKind,
    Residual,
    Sequential,
)
from .conv import Conv, conv_forward
from .core import (
    END,
    CallMode,
    CoModule,
    ConstructionError,
    CostreamError,
    InsufficientLengthError,
    Lambda,
    ShapeError,
    call_mode,
    count_flops,
    stack_ready,
    state_digest,
    wrap_stateless,
)
from .pool import AvgPool, MaxPool, Pool, PoolKind, pool_forward
from .profile import CostReport, cost, measure, redundancy_ratio

__version__ = "0.1.0"
