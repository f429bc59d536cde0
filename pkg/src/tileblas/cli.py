"""Command-line entry point.

Two modes share one pipeline (build seeded operands, run the simulated
fabric): ``verify`` checks the produced output matrix against the dense
reference and fails loudly past 1e-10 relative error; ``bench`` reports
the run's metrics as JSON and, on request, the full event trace as CSV.

Exit codes: 0 success; 1 unexpected runtime failure; 2 configuration
problem; 3 verification above tolerance; 4 arena capacity deadlock;
5 invalid argument; 6 singular triangular matrix.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import default_topology, load_topology
from .errors import (
    CapacityDeadlockError, ConfigError, InvalidArgumentError,
    SingularMatrixError, TileBlasError,
)
from .operands import (
    build_call, dense_snapshot, oracle_result, relative_error,
)
from .routines import ROUTINES
from .scheduler import RunOptions, run_call

VERIFY_TOLERANCE = 1e-10

TRACE_HEADER = ("time_start,time_end,device,stream,event,"
                "bytes_or_flops,task_id,k")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_DEADLOCK = 4
EXIT_INVALID = 5
EXIT_SINGULAR = 6


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tileblas",
        description="Tiled level-3 BLAS on a simulated multi-device "
                    "fabric: verify numerics or benchmark the schedule.")
    parser.add_argument("--routine", choices=ROUTINES, default="gemm")
    parser.add_argument("--n", type=int, default=256,
                        help="columns of the output (default 256)")
    parser.add_argument("--m", type=int, default=None,
                        help="rows of the output (default: n)")
    parser.add_argument("--k", type=int, default=None,
                        help="reduction extent for gemm/syrk/syr2k "
                             "(default: n)")
    parser.add_argument("--tile-size", type=int, default=1024)
    parser.add_argument("--alpha", type=float, default=1.0)
    parser.add_argument("--beta", type=float, default=0.0)
    parser.add_argument("--uplo", choices=("upper", "lower"),
                        default="upper")
    parser.add_argument("--side", choices=("left", "right"),
                        default="left")
    parser.add_argument("--trans", action="store_true",
                        help="apply the routine's transpose switch to A")
    parser.add_argument("--trans-b", action="store_true",
                        help="gemm only: transpose B as well")
    parser.add_argument("--diag", choices=("unit", "non-unit"),
                        default="non-unit")
    parser.add_argument("--topology", default=None, metavar="FILE",
                        help="topology file (default: two peered "
                             "accelerators)")
    parser.add_argument("--mode", choices=("verify", "bench"),
                        default="verify")
    parser.add_argument("--exec", dest="execution",
                        choices=("det", "conc"), default="det")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--metrics-out", default=None, metavar="FILE")
    parser.add_argument("--trace-out", default=None, metavar="FILE")
    return parser


def _metrics_json(metrics) -> str:
    return json.dumps(metrics.to_dict(), sort_keys=True, indent=2) + "\n"


def _write_trace(path: str, trace) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(TRACE_HEADER + "\n")
        for ev in trace:
            handle.write(f"{ev.time_start!r},{ev.time_end!r},{ev.device},"
                         f"{ev.stream},{ev.event},{ev.bytes_or_flops},"
                         f"{ev.task_id},{ev.k}\n")


def _run(args) -> int:
    if args.tile_size < 1:
        raise InvalidArgumentError("--tile-size must be >= 1")
    m = args.m if args.m is not None else args.n
    k = args.k if args.k is not None else args.n
    if min(args.n, m, k) < 1:
        raise InvalidArgumentError("matrix extents must be >= 1")

    topology = (load_topology(args.topology) if args.topology
                else default_topology())
    execution = ("deterministic" if args.execution == "det"
                 else "concurrent")
    options = RunOptions(execution=execution,
                         record_trace=args.trace_out is not None)

    call = build_call(args.routine, m=m, n=args.n, k=k,
                      tile_size=args.tile_size, seed=args.seed,
                      alpha=args.alpha, beta=args.beta,
                      trans_a=args.trans, trans_b=args.trans_b,
                      uplo=args.uplo, side=args.side, diag=args.diag)
    snapshot = dense_snapshot(call) if args.mode == "verify" else None

    result = run_call(call, topology, options)

    status = EXIT_OK
    if args.mode == "verify":
        expected = oracle_result(call, snapshot)
        error = relative_error(call.c.matrix.as_2d(), expected)
        print(f"max relative error: {error:.3e} "
              f"(tolerance {VERIFY_TOLERANCE:.0e})")
        if not error <= VERIFY_TOLERANCE:
            print("verification FAILED", file=sys.stderr)
            status = EXIT_VERIFY
        else:
            print("verification passed")
    else:
        payload = _metrics_json(result.metrics)
        if args.metrics_out:
            with open(args.metrics_out, "w", encoding="utf-8") as handle:
                handle.write(payload)
        else:
            sys.stdout.write(payload)

    if args.mode == "verify" and args.metrics_out:
        with open(args.metrics_out, "w", encoding="utf-8") as handle:
            handle.write(_metrics_json(result.metrics))
    if args.trace_out:
        _write_trace(args.trace_out, result.trace)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityDeadlockError as exc:
        print(f"capacity deadlock: {exc}", file=sys.stderr)
        return EXIT_DEADLOCK
    except SingularMatrixError as exc:
        print(f"singular matrix: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except InvalidArgumentError as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TileBlasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
