"""Reference kernels: exactness oracle, scalar-LUT baseline, MAD baseline.

Everything here is single-threaded and deliberately plain.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .core import ActivationView, KernelStats, OutputMatrix, PackedWeights, TernaryMatrix
from .errors import ShapeMismatch
from .packing import check_payload, packed_index_matrix, segments, unpack_matrix
from .kernel import _compiled, resolve_backend
from .precompute import TileBuilder


def naive_gemm_int(W: TernaryMatrix, A: ActivationView) -> OutputMatrix:
    """O[m, n] = sum_k W[m, k] * A[k, n], accumulated in int64 and narrowed to int32."""
    if W.K != A.K:
        raise ShapeMismatch(f"weights have K={W.K}, activations K={A.K}")
    wide = np.matmul(W.data.astype(np.int64), A.data.astype(np.int64))
    out = wide.astype(np.int32)
    if not np.array_equal(out, wide):
        raise OverflowError("GeMM result does not fit in int32")
    return OutputMatrix(out)


def _group_arrays(W: PackedWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-group size, first feature, and offset of its table in a flat buffer."""
    sizes = np.array(W.schedule.groups, dtype=np.int64)
    starts = np.asarray(W.schedule.offsets(), dtype=np.int64)
    bases = np.concatenate(([0], np.cumsum(3**sizes)[:-1])).astype(np.int64)
    return sizes, starts, bases


def scalar_lut_gemm(
    W: PackedWeights,
    A: ActivationView,
    stats: Optional[KernelStats] = None,
    backend: str = "auto",
) -> OutputMatrix:
    """Per-token (1 -> 1) LUT GeMM.

    Each token gets its own tables of ``3**g`` scalars per group, built from
    that token's activations; every (row, group) index then reads one scalar
    from them.  Tables for one token stay resident while the whole weight
    matrix is traversed.
    """
    if W.K != A.K:
        raise ShapeMismatch(f"weights have K={W.K}, activations K={A.K}")
    check_payload(W)
    if stats is not None:
        stats.table_builds += len(W.schedule) * A.N
        stats.lookups += W.M * len(W.schedule) * A.N
    if resolve_backend(backend) == "numba":
        idx = packed_index_matrix(W)
        sizes, starts, bases = _group_arrays(W)
        out = np.zeros((W.M, A.N), dtype=np.int32)
        table = np.empty(int((3**sizes).sum()), dtype=np.int16)
        rows = np.empty(5, dtype=np.int16)
        _compiled.scalar_lut(idx, sizes, starts, bases, A.data, out, table, rows)
        return OutputMatrix(out)

    idx = packed_index_matrix(W).astype(np.intp)  # (M, n_groups), feature-first
    out = np.zeros((W.M, A.N), dtype=np.int32)

    # one flat per-token buffer holds the tables of every group back to back
    sizes = np.array([3**g for g in W.schedule.groups], dtype=np.intp)
    flat_idx = idx + np.concatenate(([0], np.cumsum(sizes)[:-1]))
    table = np.empty(int(sizes.sum()), dtype=np.int16)
    builders = []
    k0 = lo = 0
    for g, count in segments(W.schedule):
        builders.append((k0, k0 + g * count, TileBuilder(count, g, 1, table[lo:])))
        k0 += g * count
        lo += count * 3**g

    for n in range(A.N):
        token = A.data[:, n]
        for k_lo, k_hi, builder in builders:
            builder.build(token[k_lo:k_hi])
        out[:, n] = table[flat_idx].sum(axis=1, dtype=np.int32)
    return OutputMatrix(out)


def mad_gemm(W: PackedWeights, A: ActivationView, backend: str = "auto") -> OutputMatrix:
    """Multiply-add baseline: dequantise the packed weights, then multiply-accumulate."""
    if W.K != A.K:
        raise ShapeMismatch(f"weights have K={W.K}, activations K={A.K}")
    if resolve_backend(backend) == "numba":
        sizes, starts, _ = _group_arrays(W)
        out = np.zeros((W.M, A.N), dtype=np.int32)
        act_fm = np.ascontiguousarray(A.data.T)
        _compiled.mad(packed_index_matrix(W), sizes, starts, act_fm, out, np.empty(W.K, np.int8))
        return OutputMatrix(out)
    trits = unpack_matrix(W).data.astype(np.int32)
    return OutputMatrix(trits @ A.data.astype(np.int32))


def naive_gemm_f32(W: np.ndarray, A: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=np.float32)
    A = np.asarray(A, dtype=np.float32)
    if W.ndim != 2 or A.ndim != 2 or W.shape[1] != A.shape[0]:
        raise ShapeMismatch(f"cannot multiply {W.shape} by {A.shape}")
    return W @ A
