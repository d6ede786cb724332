"""Shared data types and layout conventions.

Trit convention: inside a group of ``g`` consecutive input features, the
feature at offset ``r`` is base-3 digit ``r`` of the packed index, least
significant digit first, with digit value ``trit + 1``.  Packing, sign
extraction and table precompute all use this single convention.

Layouts:

* ``TernaryMatrix.data`` is ``(M, K)`` int8, row-major.
* ``ActivationView.data`` is ``(K, N)`` int8, token axis innermost.
* ``LutTile.data`` is ``(K_tile/g, 3**g, n_tile)`` int16, token axis innermost.
* ``OutputMatrix.data_i32`` is ``(M, N)`` int32, token axis innermost.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    BlockBoundViolation,
    ConfigInfeasible,
    IndexOutOfRange,
    InvalidTrit,
    ShapeMismatch,
    VecLutError,
)

Trit = Literal[-1, 0, 1]

GROUP_SIZES = (4, 5)
INT8_MAX = 127
INT16_MAX = 32767
# |O[m, n]| <= K * 127 must stay inside int32
MAX_K = 1 << 24


def check_trit(value: int) -> int:
    if value not in (-1, 0, 1):
        raise InvalidTrit(f"trit must be -1, 0 or +1, got {value!r}")
    return int(value)


def check_group_size(g: int) -> int:
    if g not in GROUP_SIZES:
        raise VecLutError(f"group size must be 4 or 5, got {g}")
    return g


def zero_index(g: int) -> int:
    """Packed index of the all-zero weight group: 40 for g=4, 121 for g=5."""
    return (3**g - 1) // 2


def block_bound(g: int) -> int:
    """Largest INT16 block length that cannot overflow: floor(32767 / (127 * g))."""
    return INT16_MAX // (INT8_MAX * g)


class PackingMode(enum.Enum):
    I2 = 0  # every group g=4, 2.00 bits/weight
    I1 = 1  # every group g=5, 1.60 bits/weight
    MIXED = 2  # as many g=5 groups as possible, remainder g=4

    @classmethod
    def parse(cls, text: "str | PackingMode") -> "PackingMode":
        if isinstance(text, PackingMode):
            return text
        try:
            return cls[text.upper()]
        except KeyError:
            raise VecLutError(f"unknown packing mode {text!r}") from None


@dataclass(frozen=True)
class TernaryMatrix:
    data: np.ndarray
    weight_scale: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ShapeMismatch(f"ternary matrix must be 2-D, got shape {data.shape}")
        if data.size and (data.min() < -1 or data.max() > 1):
            raise InvalidTrit("ternary matrix entries must lie in {-1, 0, +1}")
        if not np.issubdtype(data.dtype, np.integer) and data.size:
            if not np.all(data == np.round(data)):
                raise InvalidTrit("ternary matrix entries must be integral")
        object.__setattr__(self, "data", np.ascontiguousarray(data, dtype=np.int8))
        scale = float(self.weight_scale)
        if not np.isfinite(scale) or scale <= 0:
            raise VecLutError(f"weight_scale must be finite and > 0, got {scale}")
        object.__setattr__(self, "weight_scale", scale)

    @property
    def M(self) -> int:
        return self.data.shape[0]

    @property
    def K(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TernaryMatrix):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
            and np.float32(self.weight_scale) == np.float32(other.weight_scale)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class GroupSchedule:
    groups: tuple[int, ...]

    def __post_init__(self):
        groups = tuple(int(g) for g in self.groups)
        for g in groups:
            check_group_size(g)
        object.__setattr__(self, "groups", groups)

    @property
    def covered_K(self) -> int:
        return sum(self.groups)

    @property
    def g_min(self) -> int:
        return min(self.groups)

    @property
    def g_max(self) -> int:
        return max(self.groups)

    def __len__(self) -> int:
        return len(self.groups)

    def offsets(self) -> np.ndarray:
        """Feature offset of each group along K."""
        return np.concatenate(([0], np.cumsum(self.groups)[:-1])).astype(np.int64)


class KTile(NamedTuple):
    """One K-tile: a run of ``n_groups`` groups of equal size ``g``."""

    g: int
    group_start: int
    n_groups: int
    k_start: int

    @property
    def k_stop(self) -> int:
        return self.k_start + self.g * self.n_groups


def plan_k_tiles(schedule: GroupSchedule, k_tile: int) -> list[KTile]:
    """Split the schedule into K-tiles.

    A tile holds ``max(1, k_tile // g)`` groups and never crosses a change of
    group size; the first group after a change starts a fresh tile.
    """
    tiles: list[KTile] = []
    groups = schedule.groups
    offsets = schedule.offsets()
    i = 0
    while i < len(groups):
        g = groups[i]
        per_tile = max(1, k_tile // g)
        j = i
        while j < len(groups) and groups[j] == g and j - i < per_tile:
            j += 1
        tiles.append(KTile(g, i, j - i, int(offsets[i])))
        i = j
    return tiles


@dataclass(frozen=True)
class PackedWeights:
    """Tile-permuted packed weights.

    ``payload`` holds one byte per (row, group).  Bytes are laid out tile by
    tile, K-tile index outermost and M-tile index inner; inside a tile the
    bytes are group-major then row-major.  Rows are padded up to a multiple
    of ``m_tile`` with the all-zero index.  ``k_tile`` is measured in input
    features, as in :class:`KernelConfig`.
    """

    M: int
    K: int
    schedule: GroupSchedule
    k_tile: int
    m_tile: int
    payload: np.ndarray
    weight_scale: float = 1.0
    mode: PackingMode = PackingMode.MIXED

    def __post_init__(self):
        payload = np.ascontiguousarray(self.payload, dtype=np.uint8).reshape(-1)
        object.__setattr__(self, "payload", payload)
        if self.schedule.covered_K != self.K:
            raise ShapeMismatch(f"schedule covers {self.schedule.covered_K} features, K={self.K}")
        if self.m_tile < 1 or self.k_tile < 1:
            raise VecLutError("m_tile and k_tile must be positive")
        if payload.size != self.padded_M * len(self.schedule):
            raise ShapeMismatch(
                f"payload has {payload.size} bytes, expected {self.padded_M * len(self.schedule)}"
            )

    @property
    def padded_M(self) -> int:
        return -(-self.M // self.m_tile) * self.m_tile

    @property
    def n_m_tiles(self) -> int:
        return self.padded_M // self.m_tile

    @functools.cached_property
    def _k_tiles(self) -> tuple[KTile, ...]:
        return tuple(plan_k_tiles(self.schedule, self.k_tile))

    def k_tiles(self) -> list[KTile]:
        return list(self._k_tiles)

    def tile_block(self, tile: KTile) -> np.ndarray:
        """Bytes of every M-tile for one K-tile, viewed as (n_m_tiles, n_groups, m_tile)."""
        start = self.padded_M * tile.group_start
        stop = start + self.padded_M * tile.n_groups
        return self.payload[start:stop].reshape(self.n_m_tiles, tile.n_groups, self.m_tile)


@dataclass(frozen=True)
class ActivationView:
    data: np.ndarray
    token_scales: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ShapeMismatch(f"activation must be 2-D (K, N), got shape {data.shape}")
        if data.size and (data.min() < -INT8_MAX or data.max() > INT8_MAX):
            # -128 is excluded so every table entry stays within g * 127
            raise IndexOutOfRange("activation values must lie in [-127, 127]")
        object.__setattr__(self, "data", np.ascontiguousarray(data, dtype=np.int8))
        if self.token_scales is None:
            scales = np.ones(data.shape[1], dtype=np.float32)
        else:
            scales = np.ascontiguousarray(self.token_scales, dtype=np.float32).reshape(-1)
        if scales.size != data.shape[1]:
            raise ShapeMismatch(f"{scales.size} token scales for {data.shape[1]} tokens")
        if scales.size and (not np.all(np.isfinite(scales)) or scales.min() <= 0):
            raise VecLutError("token scales must be finite and > 0")
        object.__setattr__(self, "token_scales", scales)

    @property
    def K(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LutTile:
    g: int
    data: np.ndarray

    def __post_init__(self):
        check_group_size(self.g)
        if self.data.ndim != 3 or self.data.shape[1] != 3**self.g:
            raise ShapeMismatch(f"LUT tile shape {self.data.shape} does not match g={self.g}")

    @property
    def groups_in_tile(self) -> int:
        return self.data.shape[0]

    @property
    def n_tile(self) -> int:
        return self.data.shape[2]

    @property
    def nbytes(self) -> int:
        return self.data.nbytes


@dataclass
class OutputMatrix:
    data_i32: np.ndarray
    data_f32: Optional[np.ndarray] = None

    @property
    def M(self) -> int:
        return self.data_i32.shape[0]

    @property
    def N(self) -> int:
        return self.data_i32.shape[1]

    def feature_major(self) -> np.ndarray:
        """Output as (N, M), each token's features contiguous."""
        return np.ascontiguousarray(self.data_i32.T)


@dataclass(frozen=True)
class KernelConfig:
    """Tile sizes and limits for the streamed kernel.

    ``k_tile`` counts input features per K-tile; a tile of group size ``g``
    holds ``max(1, k_tile // g)`` groups.  ``block_B=None`` picks the largest
    legal INT16 block for each tile.
    """

    k_tile: int = 16
    n_tile: int = 32
    block_B: Optional[int] = None
    threads: int = 1
    l1_bytes: int = 48 * 1024
    simd_bits: int = 256

    @property
    def lanes(self) -> int:
        return max(1, self.simd_bits // 16)

    def groups_per_tile(self, g: int) -> int:
        return max(1, self.k_tile // g)

    def lut_tile_bytes(self, g_min: int, g_max: int) -> int:
        return 3**g_max * self.n_tile * self.groups_per_tile(g_min) * 2

    def block_for(self, g: int, groups_in_tile: int) -> int:
        if self.block_B is not None:
            return self.block_B
        return max(1, min(block_bound(g), groups_in_tile))

    def check(self, groups: Sequence[int] = GROUP_SIZES) -> "KernelConfig":
        """Validate against the group sizes that will be used; returns self."""
        g_min, g_max = min(groups), max(groups)
        if self.k_tile < 1 or self.n_tile < 1 or self.threads < 1:
            raise ConfigInfeasible("k_tile, n_tile and threads must be positive")
        if self.n_tile % self.lanes:
            raise ConfigInfeasible(
                f"n_tile={self.n_tile} is not a multiple of {self.lanes} INT16 lanes"
            )
        if self.block_B is not None:
            if self.block_B < 1:
                raise BlockBoundViolation("block_B must be positive")
            if self.block_B > block_bound(g_max):
                raise BlockBoundViolation(
                    f"block_B={self.block_B} exceeds the INT16 bound {block_bound(g_max)} for g={g_max}"
                )
        need = self.lut_tile_bytes(g_min, g_max)
        if need > self.l1_bytes:
            raise ConfigInfeasible(f"LUT tile needs {need} B, L1 budget is {self.l1_bytes} B")
        return self


@dataclass
class KernelStats:
    """Counters filled in by instrumented kernel runs."""

    lookups: int = 0
    table_builds: int = 0
    precompute_ops: int = 0
    lut_tiles: int = 0
    peak_lut_bytes: int = 0
    worker_lut_bytes: list[int] = field(default_factory=list)
