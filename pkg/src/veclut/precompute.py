"""Vector-LUT sub-table construction.

A sub-table for ``g`` activation rows has ``3**g`` entries; entry ``i`` is
the signed sum ``sum_r get_sign(i, r, g) * A[r, :]`` over all tokens at once.

Two builders are provided.  :func:`precompute_vanilla` enumerates every
(entry, row) pair and issues one vector add/sub per non-zero sign.
:func:`precompute_topological` starts from the all-zero entry and derives
every other entry from an already built one with a single vector add/sub,
so a table costs ``3**g - 1`` vector ops instead of ``2 * 3**(g-1) * g``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np

from .core import LutTile, check_group_size, zero_index
from .errors import ShapeMismatch


@dataclass
class OpCounter:
    """Counts row-vector add/sub operations."""

    ops: int = 0

    def add(self, n: int) -> None:
        self.ops += n


class TopoStep(NamedTuple):
    target_index: int
    source_index: Optional[int]  # None for the root
    row_offset: int
    sign: int


def get_sign(i: int, r: int, g: int) -> int:
    return (i // 3**r) % 3 - 1


@lru_cache(maxsize=None)
def sign_table(g: int) -> np.ndarray:
    """(3**g, g) int8 matrix of ``get_sign(i, r, g)``."""
    check_group_size(g)
    i = np.arange(3**g)[:, None]
    table = (i // 3 ** np.arange(g)) % 3 - 1
    table = table.astype(np.int8)
    table.flags.writeable = False
    return table


def _check_slice(a: np.ndarray, g: Optional[int]) -> tuple[np.ndarray, int]:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"activation slice must be (g, n_tile), got {a.shape}")
    g = check_group_size(a.shape[0] if g is None else g)
    if a.shape[0] != g:
        raise ShapeMismatch(f"slice has {a.shape[0]} rows, expected g={g}")
    return a, g


def precompute_vanilla(
    a: np.ndarray, g: Optional[int] = None, counter: Optional[OpCounter] = None
) -> np.ndarray:
    a, g = _check_slice(a, g)
    signs = sign_table(g)
    table = np.zeros((3**g, a.shape[1]), dtype=np.int16)
    rows = a.astype(np.int16)
    for i in range(3**g):
        for r in range(g):
            v = signs[i, r]
            if v == 1:
                table[i] += rows[r]
            elif v == -1:
                table[i] -= rows[r]
            else:
                continue
            if counter is not None:
                counter.add(1)
    return table


@lru_cache(maxsize=None)
def topo_order(g: int) -> tuple[TopoStep, ...]:
    """Build order for one sub-table, rooted at the all-zero entry.

    Digits are expanded from the most significant down.  Before expanding
    digit ``r`` every entry whose digits ``0..r`` are all 1 (zero weight)
    exists; each such entry yields two new ones by setting digit ``r`` to 0
    (subtract row ``r``) or 2 (add row ``r``).
    """
    check_group_size(g)
    root = zero_index(g)
    steps = [TopoStep(root, None, 0, 0)]
    for r in range(g - 1, -1, -1):
        low = 3**r
        centre = (low - 1) // 2
        for h in range(3 ** (g - r - 1)):
            src = h * 3 * low + low + centre
            steps.append(TopoStep(src - low, src, r, -1))
            steps.append(TopoStep(src + low, src, r, +1))
    return tuple(steps)


def run_steps(a: np.ndarray, steps, g: Optional[int] = None) -> np.ndarray:
    """Execute a step sequence one entry at a time (slow; for checking orders)."""
    a, g = _check_slice(a, g)
    table = np.zeros((3**g, a.shape[1]), dtype=np.int16)
    rows = a.astype(np.int16)
    done = np.zeros(3**g, dtype=bool)
    for step in steps:
        if step.source_index is None:
            signs = sign_table(g)[step.target_index].astype(np.int16)
            table[step.target_index] = signs @ rows
        else:
            if not done[step.source_index]:
                raise ValueError(f"step {step} reads an entry that is not built yet")
            table[step.target_index] = table[step.source_index] + step.sign * rows[step.row_offset]
        done[step.target_index] = True
    return table


class TileBuilder:
    """Topological builder for LutTiles of one fixed shape.

    Holds an INT16 copy of the activation rows and the strided views for
    every expansion layer of :func:`topo_order`, so a build is one cast, one
    zero fill and two vector ops per layer across all groups of the tile.
    A layer's steps only read entries from earlier layers.
    """

    def __init__(self, n_groups: int, g: int, n: int, buf: Optional[np.ndarray] = None):
        check_group_size(g)
        size = n_groups * 3**g * n
        if buf is None:
            buf = np.empty(size, dtype=np.int16)
        self.g = g
        self.n_groups = n_groups
        self.lut = buf[:size].reshape(n_groups, 3**g, n)
        self.rows = np.empty((n_groups, g, n), dtype=np.int16)
        self.layers = []
        for r in range(g - 1, -1, -1):
            low = 3**r
            centre = (low - 1) // 2
            view = self.lut.reshape(n_groups, 3 ** (g - r - 1), 3, low, n)
            self.layers.append(
                (
                    view[:, :, 1, centre, :],
                    view[:, :, 0, centre, :],
                    view[:, :, 2, centre, :],
                    self.rows[:, r, None, :],
                )
            )
        self.ops_per_build = n_groups * (3**g - 1)

    def build(self, a_tile: np.ndarray, counter: Optional[OpCounter] = None) -> np.ndarray:
        np.copyto(self.rows, a_tile.reshape(self.rows.shape))
        self.lut[:, zero_index(self.g), :] = 0
        for src, lower, upper, row in self.layers:
            np.subtract(src, row, out=lower)
            np.add(src, row, out=upper)
        if counter is not None:
            counter.add(self.ops_per_build)
        return self.lut


def precompute_tile(
    a_tile: np.ndarray,
    g: int,
    out: Optional[np.ndarray] = None,
    counter: Optional[OpCounter] = None,
) -> np.ndarray:
    """Topological build of several sub-tables at once.

    ``a_tile`` is (groups, g, n) int8; the result is (groups, 3**g, n) int16
    and is written into ``out`` when given.
    """
    n_groups, rows, n = a_tile.shape
    if rows != g:
        raise ShapeMismatch(f"tile has {rows} rows per group, expected g={g}")
    buf = None if out is None else out.reshape(-1)
    builder = TileBuilder(n_groups, g, n, buf)
    lut = builder.build(a_tile, counter)
    if out is not None and not np.shares_memory(out, lut):
        out[...] = lut
        return out
    return lut


def precompute_topological(
    a: np.ndarray, g: Optional[int] = None, counter: Optional[OpCounter] = None
) -> np.ndarray:
    a, g = _check_slice(a, g)
    return precompute_tile(a[None], g, counter=counter)[0]


def build_lut_tile(a_tile: np.ndarray, g: int) -> LutTile:
    """LutTile for activation rows shaped (K_tile, n_tile), K_tile a multiple of g."""
    a_tile = np.asarray(a_tile)
    k, n = a_tile.shape
    if k % g:
        raise ShapeMismatch(f"{k} activation rows do not split into groups of {g}")
    return LutTile(g, precompute_tile(a_tile.reshape(k // g, g, n), g))


def vanilla_op_count(g: int) -> int:
    return 2 * 3 ** (g - 1) * g
