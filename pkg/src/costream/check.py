"""Batch/step equivalence checking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CoModule, stack_ready
from .netspec import NetSpecDoc, build
from .randnet import min_length, random_doc

TOLERANCE = 1e-9


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| scaled by the largest magnitude in either array."""
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
    diff = float(np.max(np.abs(a - b), initial=0.0))
    return 0.0 if diff == 0.0 else diff / scale


@dataclass(frozen=True)
class TrialResult:
    seed: int
    error: float
    columns: int
    passed: bool
    detail: str = ""


def _perturb(module: CoModule) -> None:
    for p in module.parameters().values():
        p += 0.5
    for c in module.children():
        _perturb(c)


def step_outputs(module: CoModule, x: np.ndarray, fault_tick: int | None = None) -> list:
    """Ready/empty outputs of a fresh stream over ``x`` with end padding.

    ``fault_tick`` corrupts every weight in place before that tick, a
    negative control for the checker itself.
    """
    module.clean_state()
    outs = []
    for t in range(x.shape[2]):
        if t == fault_tick:
            _perturb(module)
        outs.append(module.forward_step(x[:, :, t]))
    outs.extend(module.flush())
    return outs


def compare(module: CoModule, x: np.ndarray, fault_tick: int | None = None) -> tuple[float, int, str]:
    """(relative error, ready columns, mismatch note) of step vs batch mode."""
    y = module.forward(x)
    z = stack_ready(step_outputs(module, x, fault_tick))
    if z is None or z.shape != y.shape:
        got = None if z is None else z.shape
        return float("inf"), 0, f"step mode produced {got}, batch {y.shape}"
    return rel_err(z, y), y.shape[2], ""


def check_doc(doc: NetSpecDoc, seed: int, base_dir=".", fault_tick: int | None = None,
              extra_steps: int | None = None) -> TrialResult:
    """Build ``doc``, draw a clip from ``seed`` and compare both modes."""
    rng = np.random.default_rng(seed)
    module = build(doc, base_dir)
    t = min_length(module)
    t += int(rng.integers(0, 2 * module.stride + 6)) if extra_steps is None else extra_steps
    b = int(rng.integers(1, 3))
    x = rng.standard_normal(doc.input.step_shape(b)[:2] + (t,) + doc.input.spatial)
    err, cols, note = compare(module, x, fault_tick)
    return TrialResult(seed, err, cols, err <= TOLERANCE, note)


def random_trial(seed: int, fault_tick: int | None = None) -> TrialResult:
    return check_doc(random_doc(seed), seed, fault_tick=fault_tick)
