"""Lossless base-3 byte packing of ternary weights.

A group of ``g`` trits becomes the byte ``sum((t[r] + 1) * 3**r)``; that byte
is used directly as the row index into the group's lookup sub-table.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .core import (
    GroupSchedule,
    KernelConfig,
    PackedWeights,
    PackingMode,
    TernaryMatrix,
    check_group_size,
    check_trit,
    plan_k_tiles,
    zero_index,
)
from .errors import CorruptPayload, IndexOutOfRange, ModeMismatch, UnrepresentableK

DEFAULT_M_TILE = 32


def make_group_schedule(K: int, mode: PackingMode | str) -> GroupSchedule:
    mode = PackingMode.parse(mode)
    if mode is PackingMode.I2:
        if K < 4 or K % 4:
            raise ModeMismatch(f"I2 packing needs K divisible by 4, got K={K}")
        return GroupSchedule((4,) * (K // 4))
    if mode is PackingMode.I1:
        if K < 5 or K % 5:
            raise ModeMismatch(f"I1 packing needs K divisible by 5, got K={K}")
        return GroupSchedule((5,) * (K // 5))
    # largest b with K - 5b >= 0 and divisible by 4
    for fives in range(K // 5, -1, -1):
        rest = K - 5 * fives
        if rest % 4 == 0 and fives + rest // 4 > 0:
            return GroupSchedule((5,) * fives + (4,) * (rest // 4))
    raise UnrepresentableK(f"K={K} cannot be written as 4a + 5b with a, b >= 0")


def bits_per_weight(schedule: GroupSchedule) -> float:
    return 8 * len(schedule.groups) / schedule.covered_K


def pack_group(trits: Sequence[int]) -> int:
    g = check_group_size(len(trits))
    index = 0
    for r in range(g - 1, -1, -1):
        index = index * 3 + check_trit(trits[r]) + 1
    return index


def unpack_index(index: int, g: int) -> tuple[int, ...]:
    check_group_size(g)
    if not 0 <= index < 3**g:
        raise IndexOutOfRange(f"index {index} outside [0, {3**g}) for g={g}")
    trits = []
    for _ in range(g):
        index, digit = divmod(index, 3)
        trits.append(digit - 1)
    return tuple(trits)


def pack_trit_groups(trits: np.ndarray) -> np.ndarray:
    """Vectorised :func:`pack_group` over the last axis of an int array."""
    g = check_group_size(trits.shape[-1])
    weights = 3 ** np.arange(g, dtype=np.int32)
    return ((trits.astype(np.int32) + 1) @ weights).astype(np.uint8)


def unpack_indices(indices: np.ndarray, g: int) -> np.ndarray:
    """Vectorised :func:`unpack_index`; appends a trailing axis of length ``g``."""
    check_group_size(g)
    idx = np.asarray(indices, dtype=np.int32)
    digits = (idx[..., None] // 3 ** np.arange(g, dtype=np.int32)) % 3
    return (digits - 1).astype(np.int8)


def index_matrix(W: TernaryMatrix, schedule: GroupSchedule) -> np.ndarray:
    """Packed indices in plain (M, n_groups) order, before tile permutation."""
    out = np.empty((W.M, len(schedule)), dtype=np.uint8)
    start_group = 0
    k0 = 0
    for g, count in segments(schedule):
        block = W.data[:, k0 : k0 + g * count].reshape(W.M, count, g)
        out[:, start_group : start_group + count] = pack_trit_groups(block)
        start_group += count
        k0 += g * count
    return out


def pack_matrix(
    W: TernaryMatrix,
    mode: PackingMode | str = PackingMode.MIXED,
    cfg: Optional[KernelConfig] = None,
    m_tile: int = DEFAULT_M_TILE,
) -> PackedWeights:
    mode = PackingMode.parse(mode)
    cfg = cfg or KernelConfig()
    schedule = make_group_schedule(W.K, mode)
    idx = index_matrix(W, schedule)

    n_m_tiles = -(-W.M // m_tile) if W.M else 0
    padded = np.empty((n_m_tiles * m_tile, len(schedule)), dtype=np.uint8)
    padded[: W.M] = idx
    padded[W.M :] = np.array([zero_index(g) for g in schedule.groups], dtype=np.uint8)

    parts = []
    for tile in plan_k_tiles(schedule, cfg.k_tile):
        block = padded[:, tile.group_start : tile.group_start + tile.n_groups]
        # (m_tile_idx, row, group) -> (m_tile_idx, group, row)
        block = block.reshape(n_m_tiles, m_tile, tile.n_groups).transpose(0, 2, 1)
        parts.append(block.reshape(-1))
    payload = np.concatenate(parts) if parts else np.empty(0, dtype=np.uint8)
    return PackedWeights(
        M=W.M,
        K=W.K,
        schedule=schedule,
        k_tile=cfg.k_tile,
        m_tile=m_tile,
        payload=payload,
        weight_scale=W.weight_scale,
        mode=mode,
    )


def check_payload(P: PackedWeights) -> None:
    """Raise :class:`CorruptPayload` if any byte is not a valid index for its group."""
    group0 = 0
    for g, count in segments(P.schedule):
        # tiles of one group size occupy a contiguous byte range
        seg = P.payload[P.padded_M * group0 : P.padded_M * (group0 + count)]
        if seg.size and int(seg.max()) >= 3**g:
            for tile in P.k_tiles():
                block = P.tile_block(tile)
                bad = np.nonzero(block >= 3**tile.g)
                if bad[0].size:
                    mt, grp, row = (int(a[0]) for a in bad)
                    raise CorruptPayload(
                        f"byte {int(block[mt, grp, row])} at row {mt * P.m_tile + row}, "
                        f"group {tile.group_start + grp} is not below 3**{tile.g}"
                    )
        group0 += count


def packed_index_matrix(P: PackedWeights) -> np.ndarray:
    """Undo the tile permutation: (M, n_groups) uint8 indices."""
    out = np.empty((P.padded_M, len(P.schedule)), dtype=np.uint8)
    for tile in P.k_tiles():
        block = P.tile_block(tile).transpose(0, 2, 1).reshape(P.padded_M, tile.n_groups)
        out[:, tile.group_start : tile.group_start + tile.n_groups] = block
    return out[: P.M]


def unpack_matrix(P: PackedWeights) -> TernaryMatrix:
    check_payload(P)
    idx = packed_index_matrix(P)
    data = np.empty((P.M, P.K), dtype=np.int8)
    start_group = 0
    k0 = 0
    for g, count in segments(P.schedule):
        trits = unpack_indices(idx[:, start_group : start_group + count], g)
        data[:, k0 : k0 + g * count] = trits.reshape(P.M, g * count)
        start_group += count
        k0 += g * count
    return TernaryMatrix(data, P.weight_scale)


def segments(schedule: GroupSchedule) -> list[tuple[int, int]]:
    """Run-length encode the schedule as (g, count) pairs."""
    runs: list[tuple[int, int]] = []
    for g in schedule.groups:
        if runs and runs[-1][0] == g:
            runs[-1] = (g, runs[-1][1] + 1)
        else:
            runs.append((g, 1))
    return runs

