"""Command line: pack, unpack, verify, bench, demo-layer.

Exit codes: 0 success, 1 verification mismatch, 2 unusable input
(K not packable under the mode, bad arguments, corrupt file).
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

import numpy as np

from . import bench
from .core import TernaryMatrix
from .errors import CorruptPayload, ModeMismatch, UnrepresentableK, VecLutError
from .fileformat import read_packed, write_packed
from .packing import bits_per_weight, pack_matrix, unpack_matrix


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("thread counts must be positive")
    return values


def _shape(text: str) -> tuple[int, ...]:
    try:
        return bench.parse_shape(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _kernels(text: str) -> list[str]:
    names = [k.strip() for k in text.split(",") if k.strip()]
    for k in names:
        if k not in bench.KERNELS:
            raise argparse.ArgumentTypeError(f"unknown kernel {k!r}; choose from {', '.join(bench.KERNELS)}")
    return names


def _tile_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--l1-bytes", type=int, default=None, help="L1 budget for one LUT tile (default 49152)")
    p.add_argument("--simd-bits", type=int, default=None, help="vector width used to round n_tile (default 256)")
    p.add_argument("--n-tile", type=int, default=None, help="tokens per tile (default 32)")
    p.add_argument("--k-tile", type=int, default=None, help="input features per K-tile (default: analytic)")


def _tile_overrides(args) -> dict:
    return {
        "l1_bytes": args.l1_bytes,
        "simd_bits": args.simd_bits,
        "n_tile": args.n_tile,
        "k_tile": args.k_tile,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="veclut", description="Vector-LUT ternary GeMM toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pack", help="pack a ternary matrix into a .vlt file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help=".npy file holding an (M, K) array of -1/0/+1")
    src.add_argument("--random", type=_shape, metavar="MxK", help="random ternary matrix of this shape")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("i1", "i2", "mixed"), default="mixed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weight-scale", type=float, default=1.0)
    _tile_args(p)

    p = sub.add_parser("unpack", help="unpack a .vlt file back to trits")
    p.add_argument("--input", required=True)
    p.add_argument("--out", help="write the (M, K) int8 trits as .npy")

    p = sub.add_parser("verify", help="check the kernels against the integer oracle")
    p.add_argument("--shape", type=_shape, action="append", metavar="MxKxN")
    p.add_argument("--input", help="verify a packed .vlt file on random activations")
    p.add_argument("--tokens", type=_int_list, default=None, help="N values for MxK shapes")
    p.add_argument("--mode", choices=("i1", "i2", "mixed"), action="append")
    p.add_argument("--threads", type=_int_list, default=[1])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true", help="corrupt one weight index after packing")
    _tile_args(p)

    p = sub.add_parser("bench", help="time the kernels and write CSV")
    p.add_argument("--shape", type=_shape, action="append", metavar="MxKxN")
    p.add_argument("--tokens", type=_int_list, default=None, help="N values for MxK shapes")
    p.add_argument("--kernel", type=_kernels, default=list(bench.KERNELS))
    p.add_argument("--mode", choices=("i1", "i2", "mixed"), default="mixed")
    p.add_argument("--threads", type=_int_list, default=[1])
    p.add_argument("--repeats", type=int, default=bench.MIN_REPEATS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="write CSV here instead of stdout")
    p.add_argument("--no-timing", action="store_true", help="run once, zero the timing fields")
    _tile_args(p)

    p = sub.add_parser("demo-layer", help="quantised linear layer vs FP32 reference")
    p.add_argument("--shape", type=_shape, default=(320, 3200, 32), metavar="MxKxN")
    p.add_argument("--mode", choices=("i1", "i2", "mixed"), default="mixed")
    p.add_argument("--seed", type=int, default=0)
    return parser


def cmd_pack(args) -> int:
    if args.input:
        W = TernaryMatrix(np.load(args.input), args.weight_scale)
    else:
        if len(args.random) != 2:
            raise argparse.ArgumentTypeError("--random takes MxK")
        M, K = args.random
        W = bench.random_weights(M, K, np.random.default_rng(args.seed), args.weight_scale)
    cfg = bench.make_config(W.K, args.mode, **_tile_overrides(args))
    P = pack_matrix(W, args.mode, cfg)
    size = write_packed(args.out, P)
    print(f"M={P.M} K={P.K} mode={P.mode.name} groups={len(P.schedule)} "
          f"bpw={bits_per_weight(P.schedule):.2f} k_tile={P.k_tile} m_tile={P.m_tile} bytes={size}")
    return 0


def cmd_unpack(args) -> int:
    P = read_packed(args.input)
    W = unpack_matrix(P)
    if args.out:
        np.save(args.out, W.data)
    print(f"M={W.M} K={W.K} mode={P.mode.name} bpw={bits_per_weight(P.schedule):.2f} "
          f"trits_sha={bench.checksum(W.data.astype(np.int32))}")
    return 0


def cmd_verify(args) -> int:
    overrides = _tile_overrides(args)
    if args.input:
        P = read_packed(args.input)
        W = unpack_matrix(P)
        tokens = args.tokens or list(bench.DEFAULT_TOKENS)
        failed = 0
        for N in tokens:
            A = bench.random_activations(P.K, N, np.random.default_rng([args.seed, N]))
            for t in args.threads:
                cfg = bench.make_config(P.K, P.mode, t, **{**overrides, "k_tile": P.k_tile})
                r = bench.verify_case(W, P, A, cfg, P.mode.name.lower())
                failed += not r.ok
                extra = "" if r.ok else f" {r.checked} first differs at (m, n) = {r.first_mismatch}"
                print(f"{'ok   ' if r.ok else 'FAIL '} {P.M}x{P.K}x{N} threads={t}{extra}")
        return 1 if failed else 0

    shapes = args.shape or list(bench.VERIFY_SHAPES)
    shapes = bench.expand_shapes(shapes, args.tokens or bench.DEFAULT_TOKENS)
    modes = args.mode or ["i1", "i2", "mixed"]
    results = bench.verify_suite(
        shapes, modes, args.seed, args.threads, args.inject_fault, sys.stdout, **overrides
    )
    n_bad = sum(not r.ok for r in results)
    empty = sum(r.N == 0 or r.M == 0 for r in results)
    print(f"{len(results) - n_bad}/{len(results)} cases exact" + (f" ({empty} empty)" if empty else ""))
    return 1 if n_bad else 0


def cmd_bench(args) -> int:
    shapes = bench.expand_shapes(args.shape or list(bench.BENCH_SHAPES), args.tokens or bench.DEFAULT_TOKENS)
    sums: list[tuple] = []
    records = bench.bench_suite(
        shapes, args.kernel, args.threads, args.repeats, args.mode, args.seed,
        timing=not args.no_timing, checksums=sums, **_tile_overrides(args),
    )
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            bench.write_csv(records, fh)
        for M, K, N, kernel, t, digest in sums:
            print(f"checksum {M}x{K}x{N} {kernel} threads={t} {digest}")
    else:
        bench.write_csv(records, sys.stdout)
        for M, K, N, kernel, t, digest in sums:
            print(f"checksum {M}x{K}x{N} {kernel} threads={t} {digest}", file=sys.stderr)
    return 0


def cmd_demo_layer(args) -> int:
    if len(args.shape) != 3:
        raise argparse.ArgumentTypeError("--shape takes MxKxN")
    M, K, N = args.shape
    r = bench.demo_layer(K, M, N, args.seed, args.mode)
    print(f"M={M} K={K} N={N} max_abs_err={r.max_abs_err:.6g} "
          f"max_rel_err={r.max_rel_err:.6g} within_rounding_bound={r.bound_ok}")
    return 0 if r.bound_ok else 1


COMMANDS = {
    "pack": cmd_pack,
    "unpack": cmd_unpack,
    "verify": cmd_verify,
    "bench": cmd_bench,
    "demo-layer": cmd_demo_layer,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ModeMismatch, UnrepresentableK, CorruptPayload) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (argparse.ArgumentTypeError, VecLutError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
