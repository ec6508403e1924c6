"""Command-line front door: run inference, benchmark engines, merge reports.

Exit codes: 0 success, 1 runtime error (verification or dimension
failures), 2 usage or input-file error.  Every streamed-engine time
reported by ``bench`` has first passed a bitwise equality check against
the reference engine, either on the full output or on a sub-block for
shapes too large to re-run naively.
"""

import argparse
import os
import statistics
import sys
import time

import numpy as np

from .darknet import load_network
from .engine import (
    DEFAULT_BUDGET_BYTES,
    EngineConfig,
    GemmShape,
    expected_counters,
    gemm_reference,
    gemm_streamed,
    plan_tiles,
)
from .errors import ConfigError, InputError, InvalidPreset, StreamGemmError, VerificationFailed, WeightsError
from .perf import builtin_presets, estimate, load_preset
from .report import BenchmarkReport, BenchRow, merge, read_csv, write_csv, write_plot_data
from .runtime import forward
from .tensor import Matrix, read_tensor, write_tensor

# Full reference rerun is bounded by this many multiply-accumulates;
# larger shapes fall back to a sub-block spot check.
FULL_CHECK_MAX_MACS = 2 ** 27
SPOT_CHECK_DIM = 64


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be >= 1")
    return value


def _add_engine_flags(sub):
    sub.add_argument("--tile-m", type=_positive_int, default=64)
    sub.add_argument("--tile-k", type=_positive_int, default=64)
    sub.add_argument("--tile-n", type=_positive_int, default=64)
    sub.add_argument("--banks", type=_positive_int, default=4)
    sub.add_argument("--bus-bits", type=_positive_int, default=512)
    sub.add_argument("--stream-depth", type=_positive_int, default=2)
    sub.add_argument("--budget-bytes", type=_positive_int, default=DEFAULT_BUDGET_BYTES)


def _engine_config(args):
    return EngineConfig(
        tile_m=args.tile_m,
        tile_k=args.tile_k,
        tile_n=args.tile_n,
        n_banks=args.banks,
        bus_width_bits=args.bus_bits,
        stream_depth=args.stream_depth,
        onchip_budget_bytes=args.budget_bytes,
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="streamgemm",
        description="FP32 CNN inference and GEMM benchmarking on a streamed tiled engine",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="run a network on a raw input tensor")
    run.add_argument("--cfg", required=True)
    run.add_argument("--weights", required=True)
    run.add_argument("--input", required=True)
    run.add_argument("--out", required=True)
    _add_engine_flags(run)
    run.set_defaults(func=cmd_run)

    bench = subs.add_parser("bench", help="time a GEMM shape on both engines")
    bench.add_argument("--m", type=_positive_int, required=True)
    bench.add_argument("--k", type=_positive_int, required=True)
    bench.add_argument("--n", type=_positive_int, required=True)
    bench.add_argument("--repeat", type=_positive_int, default=5)
    bench.add_argument("--preset", action="append", default=[],
                       help="builtin preset name or preset file path (repeatable)")
    bench.add_argument("--csv", help="write rows to this CSV path")
    bench.add_argument("--host", default="", help="free-text host description")
    bench.add_argument("--full-reference", action="store_true",
                       help="force a full reference run regardless of shape")
    _add_engine_flags(bench)
    bench.set_defaults(func=cmd_bench)

    report = subs.add_parser("report", help="merge bench CSVs and print a ratio table")
    report.add_argument("--baseline", required=True, help="label rows are normalized to")
    report.add_argument("--csv", action="append", required=True, help="input CSV (repeatable)")
    report.add_argument("--out", required=True, help="merged CSV output path")
    report.set_defaults(func=cmd_report)

    return parser


def _reraise_with_path(exc, path):
    line = getattr(exc, "line", None)
    where = f"{path}:{line}" if line is not None else path
    exc.args = (f"{where}: {exc}",)
    raise exc


def cmd_run(args):
    config = _engine_config(args)
    try:
        network = load_network(args.cfg, args.weights)
    except ConfigError as exc:
        _reraise_with_path(exc, args.cfg)
    except WeightsError as exc:
        _reraise_with_path(exc, args.weights)
    x = read_tensor(args.input)
    y = forward(network, x, config)
    write_tensor(args.out, y)
    dims = "x".join(str(d) for d in y.dims)
    print(f"wrote {args.out} (dims {dims})")
    if network.graph.layers[-1].kind == "softmax":
        flat = y.data.reshape(-1)
        idx = int(np.argmax(flat))
        print(f"softmax argmax: {idx} (value {flat[idx]:.6f})")
    return 0


def _timed_runs(fn, repeat):
    result = None
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
        if result is None:
            result = out
    return result, times


def _check_equality(a, b, streamed, full):
    """Bitwise streamed-vs-reference check; returns a description string."""
    if full:
        ref = gemm_reference(a, b)
        if ref.data.tobytes() != streamed.data.tobytes():
            raise VerificationFailed("streamed result differs from full reference")
        return "full reference"
    rows = min(a.rows, SPOT_CHECK_DIM)
    cols = min(b.cols, SPOT_CHECK_DIM)
    ref = gemm_reference(Matrix(a.data[:rows, :]), Matrix(b.data[:, :cols]))
    sub = streamed.data[:rows, :cols]
    if ref.data.tobytes() != np.ascontiguousarray(sub).tobytes():
        raise VerificationFailed(
            f"streamed result differs from reference on {rows}x{cols} spot check"
        )
    return f"spot check {rows}x{cols} sub-block"


def _resolve_preset(name_or_path):
    builtin = builtin_presets()
    if name_or_path in builtin:
        return builtin[name_or_path]
    if os.path.exists(name_or_path):
        return load_preset(name_or_path)
    known = ", ".join(sorted(builtin))
    raise InvalidPreset(f"unknown preset {name_or_path!r} (builtins: {known})")


def cmd_bench(args):
    config = _engine_config(args)
    shape = GemmShape(args.m, args.k, args.n)
    presets = [_resolve_preset(p) for p in args.preset]
    schedule = plan_tiles(shape, config)

    rng = np.random.default_rng(0)
    a = Matrix(rng.random((shape.m, shape.k), dtype=np.float32) - 0.5)
    b = Matrix(rng.random((shape.k, shape.n), dtype=np.float32) - 0.5)

    full = args.full_reference or shape.m * shape.k * shape.n <= FULL_CHECK_MAX_MACS
    streamed, s_times = _timed_runs(lambda: gemm_streamed(a, b, config), args.repeat)
    check = _check_equality(a, b, streamed, full)

    report = BenchmarkReport(metadata={
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "host": args.host,
        "config": repr(config),
        "repeat": args.repeat,
        "equality_check": check,
    })
    base = f"{shape.m}x{shape.k}x{shape.n}"
    print(f"shape {base}: flops {shape.flops}")

    if full:
        _, r_times = _timed_runs(lambda: gemm_reference(a, b), args.repeat)
        _append_measured(report, base, shape, "reference", r_times)
    _append_measured(report, base, shape, "streamed", s_times)
    print(f"equality check: passed ({check})")

    counters = expected_counters(schedule)
    for preset in presets:
        est = estimate(schedule, counters, preset)
        row = BenchRow(
            label=f"{base}-{preset.name}",
            m=shape.m, k=shape.k, n=shape.n,
            engine=preset.name,
            seconds=est.seconds,
            gflops=est.gflops,
            gflops_per_watt=est.gflops_per_watt,
        )
        report.add(row)
        print(
            f"{row.label}: {est.seconds:.6f} s analytic, {est.gflops:.2f} GFLOPS, "
            f"{est.gflops_per_watt:.2f} GFLOPS/W"
        )

    if args.csv:
        write_csv(args.csv, report)
        print(f"wrote {args.csv} ({len(report.rows)} rows)")
    return 0


def _append_measured(report, base, shape, engine, times):
    med = statistics.median(times)
    row = BenchRow(
        label=f"{base}-{engine}",
        m=shape.m, k=shape.k, n=shape.n,
        engine=engine,
        seconds=med,
        gflops=shape.flops / med / 1e9,
    )
    report.metadata[f"{engine}_min_s"] = min(times)
    report.metadata[f"{engine}_max_s"] = max(times)
    report.add(row)
    print(f"{row.label}: {med:.6f} s median of {len(times)}, {row.gflops:.2f} GFLOPS")


def cmd_report(args):
    reports = [read_csv(path) for path in args.csv]
    merged = merge(reports)
    write_csv(args.out, merged)
    print(f"wrote {args.out} ({len(merged.rows)} rows)")
    prefix = args.out[:-4] if args.out.endswith(".csv") else args.out
    paths = write_plot_data(prefix, merged)
    print("wrote " + ", ".join(paths))
    table = merged.ratio_table(args.baseline)
    width = max(len(label) for label, _ in table)
    print(f"speedup vs {args.baseline}:")
    for label, ratio in table:
        print(f"  {label:<{width}}  {ratio:.2f}x")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StreamGemmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
