"""Verification, benchmarking and demo drivers behind the command line.

Everything here is plain functions returning records, so tests and the
narrative scripts can call them without going through argparse.
"""

from __future__ import annotations

import csv
import hashlib
import io
import statistics
import time
from dataclasses import dataclass, fields
from typing import Callable, Iterable, Optional, Sequence, TextIO

import numpy as np

from .core import ActivationView, KernelConfig, KernelStats, PackedWeights, PackingMode, TernaryMatrix
from .errors import ModeMismatch
from .kernel import GemmProblem, apply_scales, config_for_schedule, mpgemm, quantize_activation
from .packing import make_group_schedule, pack_matrix
from .reference import mad_gemm, naive_gemm_f32, naive_gemm_int, scalar_lut_gemm

KERNELS = ("vector_lut", "scalar_lut", "naive_mad")
CSV_HEADER = ("M", "K", "N", "kernel", "mode", "threads", "repeats", "ns_per_run", "runs_per_s", "effective_gops")
WARMUP_RUNS = 2
MIN_REPEATS = 5

VERIFY_SHAPES = ((320, 3200), (128, 8640), (4096, 4096))
BENCH_SHAPES = ((320, 3200), (128, 8640), (4096, 14436))
DEFAULT_TOKENS = (1, 8, 32, 100, 512)


@dataclass
class BenchRecord:
    M: int
    K: int
    N: int
    kernel: str
    mode: str
    threads: int
    repeats: int
    ns_per_run: int
    runs_per_s: float
    effective_gops: float

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.repeats < MIN_REPEATS:
            raise ValueError(f"repeats must be >= {MIN_REPEATS}, got {self.repeats}")

    def row(self) -> list[str]:
        return [
            str(self.M), str(self.K), str(self.N), self.kernel, self.mode,
            str(self.threads), str(self.repeats), str(self.ns_per_run),
            f"{self.runs_per_s:.6g}", f"{self.effective_gops:.6g}",
        ]


assert tuple(f.name for f in fields(BenchRecord)) == CSV_HEADER


@dataclass
class VerifyResult:
    M: int
    K: int
    N: int
    mode: str
    threads: int
    ok: bool
    first_mismatch: Optional[tuple[int, int]] = None
    checked: str = "vector_lut"


def parse_shape(text: str) -> tuple[int, ...]:
    """'MxKxN' or 'MxK' -> tuple of ints."""
    parts = text.lower().replace("×", "x").split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise ValueError(f"bad shape {text!r}; expected MxKxN") from None
    if len(dims) not in (2, 3) or any(d < 0 for d in dims):
        raise ValueError(f"bad shape {text!r}; expected MxKxN")
    return dims


def expand_shapes(shapes: Iterable[Sequence[int]], tokens: Sequence[int]) -> list[tuple[int, int, int]]:
    out = []
    for s in shapes:
        if len(s) == 3:
            out.append(tuple(s))
        else:
            out.extend((s[0], s[1], n) for n in tokens)
    return out


def random_weights(M: int, K: int, rng: np.random.Generator, weight_scale: float = 1.0) -> TernaryMatrix:
    return TernaryMatrix(rng.integers(-1, 2, size=(M, K), dtype=np.int8), weight_scale)


def random_activations(K: int, N: int, rng: np.random.Generator) -> ActivationView:
    return ActivationView(rng.integers(-127, 128, size=(K, N), dtype=np.int8))


def checksum(a: np.ndarray) -> str:
    """Short content hash of an INT32 result, independent of memory layout."""
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<i4").tobytes()).hexdigest()[:16]


def first_mismatch(got: np.ndarray, want: np.ndarray) -> Optional[tuple[int, int]]:
    bad = np.argwhere(got != want)
    if bad.size == 0:
        return None
    return int(bad[0, 0]), int(bad[0, 1])


def median_ns(fn: Callable[[], object], repeats: int, warmup: int = WARMUP_RUNS) -> int:
    """Median wall time of ``repeats`` calls after ``warmup`` discarded ones."""
    if repeats < MIN_REPEATS:
        raise ValueError(f"repeats must be >= {MIN_REPEATS}")
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return int(statistics.median(samples))


def make_config(K: int, mode: str | PackingMode, threads: int = 1, **overrides) -> KernelConfig:
    """Analytic config for K under ``mode``; keyword overrides as in :func:`config_for_schedule`."""
    schedule = make_group_schedule(K, mode)
    kw = {k: v for k, v in overrides.items() if v is not None}
    return config_for_schedule(schedule, threads=threads, **kw)


def run_kernel(
    kernel: str,
    W: PackedWeights,
    A: ActivationView,
    cfg: KernelConfig,
    stats: Optional[KernelStats] = None,
) -> np.ndarray:
    if kernel == "vector_lut":
        return mpgemm(GemmProblem(W, A, cfg), stats=stats).data_i32
    if kernel == "scalar_lut":
        return scalar_lut_gemm(W, A, stats=stats).data_i32
    if kernel == "naive_mad":
        return mad_gemm(W, A).data_i32
    raise ValueError(f"unknown kernel {kernel!r}")


def verify_case(
    W: TernaryMatrix,
    P: PackedWeights,
    A: ActivationView,
    cfg: KernelConfig,
    mode: str,
    with_scalar: bool = True,
) -> VerifyResult:
    """Compare the vector-LUT kernel (and the scalar-LUT baseline) with the oracle."""
    want = naive_gemm_int(W, A).data_i32
    checks = [("vector_lut", cfg)]
    if with_scalar:
        checks.append(("scalar_lut", cfg))
    for name, c in checks:
        got = run_kernel(name, P, A, c)
        where = first_mismatch(got, want)
        if where is not None:
            return VerifyResult(W.M, W.K, A.N, mode, cfg.threads, False, where, name)
    return VerifyResult(W.M, W.K, A.N, mode, cfg.threads, True)


def verify_suite(
    shapes: Sequence[tuple[int, int, int]],
    modes: Sequence[str],
    seed: int = 0,
    threads: Sequence[int] = (1,),
    inject_fault: bool = False,
    log: Optional[TextIO] = None,
    **cfg_overrides,
) -> list[VerifyResult]:
    """Run every (shape, mode, threads) case; K not packable under a mode is skipped.

    ``inject_fault`` rewrites one payload byte to a different valid index
    after packing, to show that a corrupted weight is caught.
    """
    results = []
    for M, K, N in shapes:
        for mode in modes:
            try:
                make_group_schedule(K, mode)
            except ModeMismatch:
                if log:
                    print(f"skip  {M}x{K}x{N} {mode}: K not packable", file=log)
                continue
            rng = np.random.default_rng([seed, M, K, N])
            W = random_weights(M, K, rng)
            A = random_activations(K, N, rng)
            for t in threads:
                cfg = make_config(K, mode, t, **cfg_overrides)
                P = pack_matrix(W, mode, cfg)
                if inject_fault and M and K:
                    P = _flip_one_index(P, rng)
                r = verify_case(W, P, A, cfg, mode)
                results.append(r)
                if log:
                    status = "ok   " if r.ok else "FAIL "
                    extra = "" if r.ok else f" {r.checked} first differs at (m, n) = {r.first_mismatch}"
                    print(f"{status} {M}x{K}x{N} {mode} threads={t}{extra}", file=log)
    return results


def _flip_one_index(P: PackedWeights, rng: np.random.Generator) -> PackedWeights:
    payload = P.payload.copy()
    tile = P.k_tiles()[0]
    row = int(rng.integers(P.M))
    pos = P.padded_M * tile.group_start + (row // P.m_tile) * tile.n_groups * P.m_tile + row % P.m_tile
    payload[pos] = (int(payload[pos]) + 1) % 3**tile.g
    return PackedWeights(P.M, P.K, P.schedule, P.k_tile, P.m_tile, payload, P.weight_scale, P.mode)


def bench_suite(
    shapes: Sequence[tuple[int, int, int]],
    kernels: Sequence[str] = KERNELS,
    threads: Sequence[int] = (1,),
    repeats: int = MIN_REPEATS,
    mode: str = "mixed",
    seed: int = 0,
    timing: bool = True,
    checksums: Optional[list[tuple]] = None,
    **cfg_overrides,
) -> list[BenchRecord]:
    """One record per (shape, kernel, threads).

    The baselines are single-threaded, so they get one record with
    ``threads=1`` regardless of the requested list.  With ``timing=False``
    every kernel runs once and the timing fields are zero.
    """
    records = []
    for M, K, N in shapes:
        rng = np.random.default_rng([seed, M, K, N])
        W = random_weights(M, K, rng)
        A = random_activations(K, N, rng)
        for kernel in kernels:
            for t in threads if kernel == "vector_lut" else (1,):
                cfg = make_config(K, mode, t, **cfg_overrides)
                P = pack_matrix(W, mode, cfg)
                out = run_kernel(kernel, P, A, cfg)
                if checksums is not None:
                    checksums.append((M, K, N, kernel, t, checksum(out)))
                ns = median_ns(lambda: run_kernel(kernel, P, A, cfg), repeats) if timing else 0
                runs = 1e9 / ns if ns else 0.0
                gops = 2.0 * M * K * N / ns if ns else 0.0
                records.append(BenchRecord(M, K, N, kernel, mode.lower(), t, repeats, ns, runs, gops))
    return records


def write_csv(records: Iterable[BenchRecord], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())


def csv_text(records: Iterable[BenchRecord]) -> str:
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()


@dataclass
class DemoReport:
    M: int
    K: int
    N: int
    max_abs_err: float
    max_rel_err: float
    bound_ok: bool


def demo_layer(
    K: int,
    M: int,
    N: int,
    seed: int = 0,
    mode: str = "mixed",
    weight_scale: float = 0.02,
    zero_activations: bool = False,
) -> DemoReport:
    """Quantised ternary linear layer against an FP32 reference.

    Activations are drawn from a standard normal, quantised per token to
    INT8, multiplied exactly, and rescaled.  The reference multiplies the
    dequantised ternary weights by the unquantised activations, so the only
    error source is activation rounding: for each output,
    ``|err| <= weight_scale * sum_k |W[m, k]| * token_scale[n] / 2``.

    ``max_rel_err`` is ``max |err| / max |reference|`` over the whole output.
    """
    rng = np.random.default_rng([seed, M, K, N])
    W = random_weights(M, K, rng, weight_scale)
    a = np.zeros((K, N), dtype=np.float32) if zero_activations else rng.standard_normal((K, N)).astype(np.float32)

    Aq = quantize_activation(a)
    cfg = make_config(K, mode)
    P = pack_matrix(W, mode, cfg)
    out = apply_scales(mpgemm(GemmProblem(P, Aq, cfg)), W.weight_scale, Aq.token_scales).data_f32

    w_deq = W.data.astype(np.float32) * np.float32(W.weight_scale)
    ref = naive_gemm_f32(w_deq, a)
    err = np.abs(out.astype(np.float64) - ref.astype(np.float64))

    row_l1 = np.abs(W.data).sum(axis=1, dtype=np.float64)[:, None]
    bound = np.float32(W.weight_scale) * row_l1 * Aq.token_scales.astype(np.float64)[None, :] / 2
    # FP32 rounding in the reference and in the scale product
    slack = 1e-5 * (np.abs(w_deq).astype(np.float64) @ np.abs(a).astype(np.float64)) + 1e-6
    bound_ok = bool(np.all(err <= bound + slack)) if err.size else True

    peak = float(np.abs(ref).max()) if ref.size else 0.0
    max_abs = float(err.max()) if err.size else 0.0
    max_rel = max_abs / peak if peak > 0 else 0.0
    return DemoReport(M, K, N, max_abs, max_rel, bound_ok)
