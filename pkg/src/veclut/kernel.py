"""Streamed vector-LUT mixed-precision GeMM.

Loop nest per worker (a worker owns a contiguous range of M-tiles)::

    for each N-tile:
        for each K-tile:
            precompute the LutTile (groups_in_tile, 3**g, n_tile) in INT16
            for each group in the tile:
                one index byte per output row -> one INT16 row vector of n_tile
                add into the INT16 block accumulator
                widen into the INT32 output every block_B groups and at tile end

Only one LutTile per worker is alive at any time; the full table
(K/g, 3**g, N) is never built.  Two backends run the same nest: ``numba``
compiles it with the token axis as the vectorised inner loop, and ``numpy``
handles all rows and groups of one INT16 block with a single gather, reducing
in INT16 before the INT32 flush.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

from .core import (
    INT8_MAX,
    MAX_K,
    ActivationView,
    GroupSchedule,
    KernelConfig,
    KernelStats,
    KTile,
    OutputMatrix,
    PackedWeights,
    block_bound,
    check_group_size,
)
from .errors import (
    BlockBoundViolation,
    ConfigInfeasible,
    DivisibilityError,
    NonFiniteInput,
    ShapeMismatch,
)
from .packing import check_payload
from .precompute import OpCounter, TileBuilder

try:
    from . import _compiled
except ImportError:  # pragma: no cover - numba missing
    _compiled = None

# empirical K_tile caps, in groups
MAX_GROUPS_PER_TILE = {4: 4, 5: 2}
DEFAULT_N_TILE = 32


@dataclass(frozen=True)
class FeatureMajorActivation:
    """INT8 activations stored (N, K): each token's features contiguous.

    Passing this to :func:`mpgemm` transposes per K-tile while building
    the LUT instead of in a separate pass.
    """

    data: np.ndarray
    token_scales: Optional[np.ndarray] = None

    def __post_init__(self):
        view = ActivationView(np.asarray(self.data).T, self.token_scales)
        object.__setattr__(self, "data", np.ascontiguousarray(view.data.T))
        object.__setattr__(self, "token_scales", view.token_scales)

    @property
    def K(self) -> int:
        return self.data.shape[1]

    @property
    def N(self) -> int:
        return self.data.shape[0]


Activations = Union[ActivationView, FeatureMajorActivation]


@dataclass(frozen=True)
class GemmProblem:
    W: PackedWeights
    A: Activations
    cfg: KernelConfig

    def __post_init__(self):
        if self.W.K != self.A.K:
            raise ShapeMismatch(f"weights have K={self.W.K}, activations K={self.A.K}")
        if self.W.K >= MAX_K:
            raise ShapeMismatch(f"K={self.W.K} could overflow INT32 outputs")
        if self.cfg.k_tile != self.W.k_tile:
            raise ConfigInfeasible(
                f"weights were packed for k_tile={self.W.k_tile}, config has {self.cfg.k_tile}"
            )
        self.cfg.check(self.W.schedule.groups)


def transpose_to_token_major(
    a_feature_major: np.ndarray, token_scales: Optional[np.ndarray] = None
) -> ActivationView:
    a = np.asarray(a_feature_major)
    if a.ndim == 1:
        a = a[None, :]
    return ActivationView(np.ascontiguousarray(a.T), token_scales)


def select_tiles(
    g: int,
    l1_bytes: int,
    simd_bits: int,
    n_tile: int = DEFAULT_N_TILE,
    max_groups: Optional[int] = None,
) -> tuple[int, int]:
    """(k_tile, n_tile) for one group size.

    ``n_tile`` is the default rounded up to a multiple of the INT16 lane
    count; ``k_tile`` is the largest multiple of ``g`` whose INT16 LUT tile
    fits in ``l1_bytes``, capped at ``max_groups`` groups.
    """
    check_group_size(g)
    lanes = max(1, simd_bits // 16)
    n_tile = -(-n_tile // lanes) * lanes
    per_group = 3**g * n_tile * 2
    fit = l1_bytes // per_group
    if fit < 1:
        raise ConfigInfeasible(
            f"one sub-table of {per_group} B (g={g}, n_tile={n_tile}) exceeds L1 of {l1_bytes} B"
        )
    cap = MAX_GROUPS_PER_TILE[g] if max_groups is None else max_groups
    return g * min(fit, cap), n_tile


def config_for_schedule(
    schedule: GroupSchedule,
    l1_bytes: int = 48 * 1024,
    simd_bits: int = 256,
    threads: int = 1,
    n_tile: int = DEFAULT_N_TILE,
    k_tile: Optional[int] = None,
    block_B: Optional[int] = None,
) -> KernelConfig:
    """Analytic config for a schedule, sized by its largest group."""
    if k_tile is None:
        k_tile, n_tile = select_tiles(schedule.g_max, l1_bytes, simd_bits, n_tile)
        # mixed schedules: g=4 tiles hold more groups, so shrink to the worst case
        while k_tile > schedule.g_max:
            cfg = KernelConfig(k_tile, n_tile, block_B, threads, l1_bytes, simd_bits)
            if cfg.lut_tile_bytes(schedule.g_min, schedule.g_max) <= l1_bytes:
                break
            k_tile -= schedule.g_max
    cfg = KernelConfig(k_tile, n_tile, block_B, threads, l1_bytes, simd_bits)
    return cfg.check(schedule.groups)


def full_lut_bytes(K: int, N: int, g: int) -> int:
    """Size of an untiled INT16 vector LUT for a K x N activation."""
    if K % g:
        raise DivisibilityError(f"K={K} is not a multiple of g={g}")
    return (K // g) * 3**g * N * 2


def hierarchical_accumulate(
    lut_rows: np.ndarray,
    indices: np.ndarray,
    block_B: int,
    g: Optional[int] = None,
) -> np.ndarray:
    """Sum ``lut_rows[indices]`` through an INT16 block into INT32 lanes."""
    lut_rows = np.asarray(lut_rows, dtype=np.int16)
    if g is None:
        g = round(math.log(lut_rows.shape[0], 3))
    bound = block_bound(g)
    if not 1 <= block_B <= bound:
        raise BlockBoundViolation(f"block_B={block_B} outside [1, {bound}] for g={g}")
    total = np.zeros(lut_rows.shape[1], dtype=np.int32)
    acc = np.zeros(lut_rows.shape[1], dtype=np.int16)
    pending = 0
    for idx in np.asarray(indices).reshape(-1):
        acc += lut_rows[idx]
        pending += 1
        if pending == block_B:
            total += acc
            acc[:] = 0
            pending = 0
    if pending:
        total += acc
    return total


def _worker(
    W: PackedWeights,
    act: np.ndarray,
    feature_major: bool,
    tiles: list[KTile],
    cfg: KernelConfig,
    mt0: int,
    mt1: int,
    out: np.ndarray,
    stats: Optional[KernelStats],
    out_feature_major: bool = False,
) -> None:
    r0 = mt0 * W.m_tile
    r1 = min(mt1 * W.m_tile, W.M)
    nrows = r1 - r0
    N = act.shape[0] if feature_major else act.shape[1]
    n_tile = cfg.n_tile
    if nrows <= 0 or N == 0:
        return

    # this worker's index bytes per K-tile as (groups, rows), read from the
    # tile layout and offset so that group j addresses sub-table j of the tile
    streams = []
    for tile in tiles:
        block = W.tile_block(tile)[mt0:mt1]
        stream = block.transpose(1, 0, 2).reshape(tile.n_groups, -1)[:, :nrows]
        offsets = (np.arange(tile.n_groups, dtype=np.uint16) * 3**tile.g)[:, None]
        streams.append(stream + offsets)

    lut_buf = np.empty(max(t.n_groups * 3**t.g for t in tiles) * n_tile, dtype=np.int16)
    max_block = max(min(cfg.block_for(t.g, t.n_groups), t.n_groups) for t in tiles)
    gather_buf = np.empty((max_block, nrows, n_tile), dtype=np.int16)
    acc_buf = np.empty((nrows, n_tile), dtype=np.int16)
    builders: dict[tuple[int, int, int], TileBuilder] = {}
    counter = OpCounter() if stats is not None else None
    lookups = 0

    for n0 in range(0, N, n_tile):
        nt = min(n_tile, N - n0)
        if out_feature_major:
            # out is (N, M); the INT32 flush writes the transposed block
            acc32 = out[n0 : n0 + nt, r0:r1].T
        else:
            acc32 = out[r0:r1, n0 : n0 + nt]
        acc = acc_buf[:, :nt]
        for tile, stream in zip(tiles, streams):
            G, g = tile.n_groups, tile.g
            if feature_major:
                a_tile = act[n0 : n0 + nt, tile.k_start : tile.k_stop].T
            else:
                a_tile = act[tile.k_start : tile.k_stop, n0 : n0 + nt]
            builder = builders.get((G, g, nt))
            if builder is None:
                builder = builders[(G, g, nt)] = TileBuilder(G, g, nt, lut_buf)
            lut = builder.build(a_tile, counter).reshape(G * 3**g, nt)

            # INT16 block of at most block_B lookups, then widen into INT32
            block_B = cfg.block_for(g, G)
            for j0 in range(0, G, block_B):
                j1 = min(j0 + block_B, G)
                rows = gather_buf[: j1 - j0, :, :nt]
                np.take(lut, stream[j0:j1], axis=0, out=rows)
                if j1 - j0 == 1:
                    acc32 += rows[0]
                else:
                    np.sum(rows, axis=0, dtype=np.int16, out=acc)
                    acc32 += acc
            lookups += G * nrows

    if stats is not None:
        stats.lookups += lookups
        stats.precompute_ops += counter.ops
        stats.lut_tiles += len(tiles) * -(-N // n_tile)
        stats.table_builds += len(W.schedule) * -(-N // n_tile)
        stats.worker_lut_bytes.append(lut_buf.nbytes)


def _compiled_worker(
    W: PackedWeights,
    act: np.ndarray,
    feature_major: bool,
    tiles: list[KTile],
    cfg: KernelConfig,
    mt0: int,
    mt1: int,
    out: np.ndarray,
    stats: Optional[KernelStats],
    out_feature_major: bool = False,
) -> None:
    n_tile = cfg.n_tile
    table = np.array(
        [(t.g, t.n_groups, t.k_start, W.padded_M * t.group_start) for t in tiles], dtype=np.int64
    )
    lut = np.empty(max(t.n_groups * 3**t.g for t in tiles) * n_tile, dtype=np.int16)
    acc = np.empty(W.m_tile * n_tile, dtype=np.int16)
    rows = np.empty(max(t.g for t in tiles) * n_tile, dtype=np.int16)
    lookups, ops = _compiled.vlut_worker(
        W.payload, table, W.padded_M, W.m_tile, W.M, mt0, mt1,
        act, feature_major, out, out_feature_major, n_tile, cfg.block_B or 0, lut, acc, rows,
    )
    if stats is not None:
        n_tiles_n = -(-(act.shape[0] if feature_major else act.shape[1]) // n_tile)
        stats.lookups += lookups
        stats.precompute_ops += ops
        stats.lut_tiles += len(tiles) * n_tiles_n
        stats.table_builds += len(W.schedule) * n_tiles_n
        stats.worker_lut_bytes.append(lut.nbytes)


def resolve_backend(backend: str) -> str:
    if backend == "auto":
        return "numba" if _compiled is not None else "numpy"
    if backend == "numba" and _compiled is None:
        raise ValueError("numba backend requested but numba is not importable")
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


def mpgemm(
    problem: GemmProblem,
    stats: Optional[KernelStats] = None,
    out_layout: Literal["token", "feature"] = "token",
    backend: str = "auto",
) -> OutputMatrix:
    """Exact INT32 product of packed ternary weights and INT8 activations.

    With ``out_layout="feature"`` the INT32 flush writes into an (N, M)
    buffer; ``data_i32`` is then a transposed view of it.  ``backend`` picks
    the numba-compiled loops or the pure numpy implementation.
    """
    W, A, cfg = problem.W, problem.A, problem.cfg
    backend = resolve_backend(backend)
    check_payload(W)
    feature_major = isinstance(A, FeatureMajorActivation)
    N = A.N
    if out_layout == "feature":
        buf = np.zeros((N, W.M), dtype=np.int32)
        result = buf.T
    elif out_layout == "token":
        buf = result = np.zeros((W.M, N), dtype=np.int32)
    else:
        raise ValueError(f"unknown out_layout {out_layout!r}")

    tiles = W.k_tiles()
    if W.M and N and tiles:
        chunks = [c for c in np.array_split(np.arange(W.n_m_tiles), cfg.threads) if c.size]
        jobs = [(int(c[0]), int(c[-1]) + 1) for c in chunks]
        local = [KernelStats() if stats is not None else None for _ in jobs]
        args = [
            (W, A.data, feature_major, tiles, cfg, mt0, mt1, buf, st)
            for (mt0, mt1), st in zip(jobs, local)
        ]
        worker = functools.partial(
            _compiled_worker if backend == "numba" else _worker,
            out_feature_major=out_layout == "feature",
        )
        if len(jobs) == 1:
            worker(*args[0])
        else:
            with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
                for fut in [pool.submit(worker, *a) for a in args]:
                    fut.result()
        if stats is not None:
            for st in local:
                stats.lookups += st.lookups
                stats.precompute_ops += st.precompute_ops
                stats.lut_tiles += st.lut_tiles
                stats.table_builds += st.table_builds
                stats.worker_lut_bytes.extend(st.worker_lut_bytes)
            # all workers hold their tile buffer for the whole call
            live = sum(st.worker_lut_bytes[0] for st in local if st.worker_lut_bytes)
            stats.peak_lut_bytes = max(stats.peak_lut_bytes, live)
    return OutputMatrix(result)


def apply_scales(O: OutputMatrix, weight_scale: float, token_scales: np.ndarray) -> OutputMatrix:
    token_scales = np.asarray(token_scales, dtype=np.float32).reshape(-1)
    if token_scales.size != O.N:
        raise ShapeMismatch(f"{token_scales.size} token scales for {O.N} tokens")
    scaled = O.data_i32.astype(np.float64) * (
        np.float64(np.float32(weight_scale)) * token_scales.astype(np.float64)
    )
    return OutputMatrix(O.data_i32, scaled.astype(np.float32))


def quantize_activation(
    a: np.ndarray, layout: Literal["token", "feature"] = "token"
) -> ActivationView:
    """Per-token symmetric INT8 quantisation.

    ``layout="token"`` takes (K, N); ``layout="feature"`` takes (N, K).
    Rounds half away from zero and clamps to [-127, 127].
    """
    a = np.asarray(a, dtype=np.float32)
    if a.ndim != 2:
        raise ShapeMismatch(f"activations must be 2-D, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput("activations contain NaN or Inf")
    x = a if layout == "token" else a.T
    if x.shape[0] == 0:
        amax = np.zeros(x.shape[1], dtype=np.float32)
    else:
        amax = np.abs(x).max(axis=0)
    scales = np.where(amax > 0, amax.astype(np.float64) / INT8_MAX, 1.0).astype(np.float32)
    q = x.astype(np.float64) / scales.astype(np.float64)
    q = np.sign(q) * np.floor(np.abs(q) + 0.5)
    q = np.clip(q, -INT8_MAX, INT8_MAX).astype(np.int8)
    return ActivationView(q, scales)
