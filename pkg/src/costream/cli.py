"""``costream`` command line: report, check, bench, run.

Exit codes: 0 success, 1 equivalence check failed, 2 usage or validation
error. ``COSTREAM_LOG`` (error, info, debug) sets the log level.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import statistics
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np

from . import netspec
from .check import TOLERANCE, check_doc, random_trial
from .core import CoModule, CostreamError
from .profile import cost, measure, redundancy_ratio
from .randnet import BOUNDS
from .timing import LayerTiming, accumulate

log = logging.getLogger("costream")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load(path: str) -> tuple[netspec.NetSpecDoc, CoModule, Path]:
    p = Path(path)
    try:
        text = p.read_bytes()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None
    doc = netspec.parse(text)
    return doc, netspec.build(doc, p.parent), p.parent


# -- report ----------------------------------------------------------------


def layers(doc: netspec.NetSpecDoc, module: CoModule) -> list[tuple[str, CoModule]]:
    """Top-level layers: the children of a root sequential, else the root."""
    if doc.net.type == "sequential":
        return [(c.type, m) for c, m in zip(doc.net.params["children"], module.children())]
    return [(doc.net.type, module)]


def report_text(doc: netspec.NetSpecDoc, module: CoModule) -> str:
    named = layers(doc, module)
    lts = [LayerTiming(m.receptive_field, m.padding, m.stride) for _, m in named]
    nt = accumulate(lts)
    head = ("layer", "type", "f", "p", "s", "f_acc", "p_acc", "s_acc", "d_acc")
    rows = [head]
    for i, ((kind, _), lt) in enumerate(zip(named, lts)):
        rows.append((str(i), kind, str(lt.f), str(lt.p), str(lt.s),
                     str(nt.f_acc[i]), str(nt.p_acc[i]), str(nt.s_acc[i]), str(nt.d_acc[i])))
    widths = [max(len(r[c]) for r in rows) for c in range(len(head))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    r = nt.r_nn
    lines.append(f"s_NN={nt.s_nn} r_NN={r.numerator}/{r.denominator} d_NN={nt.d_nn}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    doc, module, _ = _load(args.spec)
    sys.stdout.write(report_text(doc, module))
    return EXIT_OK


# -- check -----------------------------------------------------------------


def cmd_check(args) -> int:
    if (args.spec is None) == (not args.random):
        raise UsageError("check needs either a netspec path or --random")
    fault = args.inject_fault
    if args.random:
        def trial(seed):
            return random_trial(seed, fault_tick=fault)
    else:
        doc, _, base = _load(args.spec)

        def trial(seed):
            return check_doc(doc, seed, base, fault_tick=fault)
    worst, failed = 0.0, []
    for i in range(args.trials):
        seed = args.seed + i
        r = trial(seed)
        log.debug("trial seed=%d columns=%d rel_err=%.3e", seed, r.columns, r.error)
        worst = max(worst, r.error)
        if not r.passed:
            failed.append(r)
            print(f"FAIL seed={seed} rel_err={r.error:.3e} {r.detail}".rstrip())
    n = args.trials
    print(f"{n - len(failed)}/{n} passed, max rel err {worst:.3e} (tolerance {TOLERANCE:g})")
    if failed:
        flag = "--random" if args.random else args.spec
        print(f"reproduce: costream check {flag} --seed {failed[0].seed} --trials 1")
        return EXIT_FAIL
    return EXIT_OK


# -- bench -----------------------------------------------------------------


def _median_time(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cmd_bench(args) -> int:
    doc, module, _ = _load(args.spec)
    t, reps = args.steps, args.reps
    if reps < 30:
        raise UsageError("--reps must be at least 30")
    shape = doc.input.step_shape()
    rep = cost(module, shape, t)
    ratio = redundancy_ratio(module, shape, t)
    measured = measure(module, shape, t)
    rng = np.random.default_rng(0)
    clip = rng.standard_normal(shape[:2] + (t,) + shape[2:])
    fwd_time = _median_time(lambda: module.forward(clip), reps)

    module.clean_state()
    steps = iter(rng.standard_normal((module.delay + reps * module.stride + 1,) + shape))
    for _ in range(module.delay):
        module.forward_step(next(steps))
    step_time = _median_time(lambda: module.forward_step(next(steps)), reps)
    module.clean_state()

    rows = [
        ("window T", str(t)),
        ("flops_forward", str(rep.flops_forward)),
        ("flops_step", str(rep.flops_step)),
        ("flops_step (instrumented)", str(measured.flops_step)),
        ("redundancy_ratio", f"{ratio} ({float(ratio):.4f})"),
    ]
    if module.stride > 1:
        per = redundancy_ratio(module, shape, t, per_prediction=True)
        rows.append(("per-prediction ratio", f"{per} ({float(per):.4f})"))
    baseline = t * int(np.prod(shape)) * 8
    rows += [
        ("state_bytes", str(rep.state_bytes)),
        ("sliding-window bytes", str(baseline)),
        ("params_count", str(rep.params_count)),
        ("step time (median)", f"{step_time * 1e6:.1f} us"),
        ("forward time (median)", f"{fwd_time * 1e6:.1f} us"),
        ("repetitions", str(reps)),
    ]
    w = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k.ljust(w)}  {v}")
    return EXIT_OK


# -- run -------------------------------------------------------------------


@contextmanager
def _open(path: str | None, mode: str) -> Iterator[TextIO]:
    if path in (None, "-"):
        yield sys.stdin if "r" in mode else sys.stdout
    else:
        try:
            f = open(path, mode, newline="", encoding="utf-8")
        except OSError as e:
            raise UsageError(f"cannot open {path}: {e.strerror}") from None
        with f:
            yield f


def read_steps(f: TextIO, width: int) -> Iterator[np.ndarray]:
    """Rows of a ``c0,...`` CSV as flat vectors; errors name the line."""
    reader = csv.reader(f)
    expected = [f"c{i}" for i in range(width)]
    header = next(reader, None)
    if header is None:
        raise UsageError("line 1: missing header")
    if [h.strip() for h in header] != expected:
        raise UsageError(f"line 1: header must be {','.join(expected)}")
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != width:
            raise UsageError(f"line {line}: expected {width} values, got {len(row)}")
        try:
            values = np.array([float(v) for v in row])
        except ValueError:
            raise UsageError(f"line {line}: malformed number") from None
        yield values


def format_row(y) -> list[str]:
    if y is None:
        return ["empty"]
    return [repr(float(v)) for v in np.ravel(y)]


def cmd_run(args) -> int:
    doc, module, _ = _load(args.spec)
    in_shape = doc.input.step_shape()
    out_shape = module.out_shape(in_shape)
    width = int(np.prod(in_shape))
    module.clean_state()
    with _open(args.input, "r") as fin, _open(args.output, "w") as fout:
        w = csv.writer(fout, lineterminator="\n")
        w.writerow([f"y{i}" for i in range(int(np.prod(out_shape)))])
        for v in read_steps(fin, width):
            w.writerow(format_row(module.forward_step(v.reshape(in_shape))))
        if args.pad_end:
            for y in module.flush():
                w.writerow(format_row(y))
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    b = BOUNDS
    ap = argparse.ArgumentParser(prog="costream", description="Continual inference network tools.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("report", help="per-layer timing table")
    p.add_argument("spec")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser(
        "check", help="batch vs step equivalence",
        description=(
            "Compare batch outputs with step outputs (end padding flushed) at relative "
            f"tolerance {TOLERANCE:g}. Random networks stay within depth <= {b.max_depth}, "
            f"branches <= {b.max_branches}, kernel_t <= {b.max_kernel_t}, channels <= {b.max_channels}, "
            f"spatial extents <= {b.max_spatial}, stride <= {b.max_stride}, "
            f"receptive field <= {b.max_receptive_field}. Trial i uses seed SEED + i."
        ))
    p.add_argument("spec", nargs="?")
    p.add_argument("--random", action="store_true", help="check randomly generated networks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--inject-fault", type=int, default=None, metavar="TICK", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("bench", help="analytic cost and measured timing")
    p.add_argument("spec")
    p.add_argument("--steps", type=int, default=64, help="window length T")
    p.add_argument("--reps", type=int, default=30, help="timing repetitions (>= 30)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("run", help="stream a CSV through the network")
    p.add_argument("spec")
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-")
    p.add_argument("--pad-end", action="store_true", help="flush end padding after the input")
    p.set_defaults(fn=cmd_run)
    return ap


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("COSTREAM_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(message)s")
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "trials", 1) < 1:
        ap.error("--trials must be >= 1")
    if getattr(args, "steps", 1) < 1:
        ap.error("--steps must be >= 1")
    try:
        return args.fn(args)
    except (UsageError, CostreamError) as e:
        print(f"costream: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
