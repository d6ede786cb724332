"""numba-compiled inner loops for the vector-LUT, scalar-LUT and MAD kernels.

Loops are written out exactly in the order the kernels describe; all
functions release the GIL so worker threads run them concurrently.
"""

from __future__ import annotations

import numpy as np
from numba import njit

INT16_MAX = 32767
INT8_MAX = 127


@njit(nogil=True, cache=True)
def _build_sub_table(lut, base, g, rows, n_tile, nt):
    """Topological build of one sub-table at ``lut[base*n_tile:]`` from ``rows`` (g, n_tile)."""
    # unsigned offsets keep numba from emitting negative-index fixups,
    # which would stop LLVM from vectorising the lane loops
    nu = np.uint64(n_tile)
    ntu = np.uint64(nt)
    bu = np.uint64(base)
    size = 3**g
    zero = np.uint64((size - 1) // 2)
    z = (bu + zero) * nu
    for n in range(ntu):
        lut[z + n] = 0
    ops = 0
    for step in range(g):
        r = g - 1 - step
        low = np.uint64(3**r)
        centre = (low - np.uint64(1)) // np.uint64(2)
        a = np.uint64(r) * nu
        for h in range(3 ** (g - r - 1)):
            src = np.uint64(h) * np.uint64(3) * low + low + centre
            s = (bu + src) * nu
            lo = (bu + src - low) * nu
            hi = (bu + src + low) * nu
            for n in range(ntu):
                v = lut[s + n]
                x = rows[a + n]
                lut[lo + n] = v - x
                lut[hi + n] = v + x
            ops += 2
    return ops


@njit(nogil=True, cache=True)
def vlut_worker(
    payload, tiles, padded_M, m_tile, M, mt0, mt1,
    act, fm_in, out, fm_out, n_tile, block_B, lut, acc, rows,
):
    """One worker's share of the streamed vector-LUT GeMM.

    ``tiles`` rows are (g, n_groups, k_start, byte_offset).  Returns
    (vector lookups, precompute row ops).

    Within a block of B groups the INT16 sum is formed in ``acc``: the first
    two lookups are added as they are stored, and the last one is added on
    the way into the INT32 output, so no separate zeroing or flush pass runs.
    """
    N = act.shape[0] if fm_in else act.shape[1]
    nu = np.uint64(n_tile)
    mtu = np.uint64(m_tile)
    lookups = 0
    ops = 0
    for n0 in range(0, N, n_tile):
        nt = min(n_tile, N - n0)
        ntu = np.uint64(nt)
        n0u = np.uint64(n0)
        for t in range(tiles.shape[0]):
            g = tiles[t, 0]
            G = tiles[t, 1]
            k_start = tiles[t, 2]
            offset = tiles[t, 3]
            size = 3**g

            # precompute the LutTile; a feature-major input is transposed here
            for j in range(G):
                for r in range(g):
                    k = k_start + j * g + r
                    if fm_in:
                        for n in range(nt):
                            rows[r * n_tile + n] = act[n0 + n, k]
                    else:
                        for n in range(nt):
                            rows[r * n_tile + n] = act[k, n0 + n]
                ops += _build_sub_table(lut, j * size, g, rows, n_tile, nt)

            B = block_B if block_B > 0 else min(INT16_MAX // (INT8_MAX * g), G)
            for mt in range(mt0, mt1):
                m_base = mt * m_tile
                rr = min(m_tile, M - m_base)
                if rr <= 0:
                    break
                blk = np.uint64(offset + mt * G * m_tile)
                j0 = 0
                while j0 < G:
                    j1 = min(j0 + B, G)
                    width = j1 - j0
                    first = blk + np.uint64(j0) * mtu
                    last = blk + np.uint64(j1 - 1) * mtu
                    ta = np.uint64(j0 * size)
                    tz = np.uint64((j1 - 1) * size)
                    if width >= 3:
                        tb = np.uint64((j0 + 1) * size)
                        for row in range(np.uint64(rr)):
                            d = row * nu
                            sa = (ta + np.uint64(payload[first + row])) * nu
                            sb = (tb + np.uint64(payload[first + mtu + row])) * nu
                            for n in range(ntu):
                                acc[d + n] = lut[sa + n] + lut[sb + n]
                        for j in range(j0 + 2, j1 - 1):
                            tj = np.uint64(j * size)
                            bj = blk + np.uint64(j) * mtu
                            for row in range(np.uint64(rr)):
                                d = row * nu
                                sj = (tj + np.uint64(payload[bj + row])) * nu
                                for n in range(ntu):
                                    acc[d + n] += lut[sj + n]
                    for row in range(np.uint64(rr)):
                        d = row * nu
                        m = np.uint64(m_base) + row
                        sz = (tz + np.uint64(payload[last + row])) * nu
                        if width == 1:
                            if fm_out:
                                for n in range(ntu):
                                    out[n0u + n, m] += lut[sz + n]
                            else:
                                for n in range(ntu):
                                    out[m, n0u + n] += lut[sz + n]
                        elif width == 2:
                            sa = (ta + np.uint64(payload[first + row])) * nu
                            if fm_out:
                                for n in range(ntu):
                                    out[n0u + n, m] += np.int16(lut[sa + n] + lut[sz + n])
                            else:
                                for n in range(ntu):
                                    out[m, n0u + n] += np.int16(lut[sa + n] + lut[sz + n])
                        elif fm_out:
                            for n in range(ntu):
                                out[n0u + n, m] += np.int16(acc[d + n] + lut[sz + n])
                        else:
                            for n in range(ntu):
                                out[m, n0u + n] += np.int16(acc[d + n] + lut[sz + n])
                    lookups += rr * width
                    j0 = j1
    return lookups, ops


@njit(nogil=True, cache=True)
def scalar_lut(idx, group_g, group_k, group_base, act, out, table, rows):
    """Per-token 1 -> 1 LUT GeMM over a feature-first (M, n_groups) index matrix."""
    M, G = idx.shape
    N = act.shape[1]
    for n in range(N):
        for j in range(G):
            g = group_g[j]
            for r in range(g):
                rows[r] = act[group_k[j] + r, n]
            _build_sub_table(table, group_base[j], g, rows, 1, 1)
        for m in range(np.uint64(M)):
            s = np.int32(0)
            for j in range(np.uint64(G)):
                s += table[np.uint64(group_base[j]) + np.uint64(idx[m, j])]
            out[m, n] = s


@njit(nogil=True, cache=True)
def mad(idx, group_g, group_k, act_fm, out, wrow):
    """Dequantise one weight row at a time, then multiply-add against every token."""
    M, G = idx.shape
    N, K = act_fm.shape
    for m in range(M):
        for j in range(G):
            v = np.int32(idx[m, j])
            for r in range(group_g[j]):
                wrow[group_k[j] + r] = v % 3 - 1
                v //= 3
        for n in range(np.uint64(N)):
            s = np.int32(0)
            for k in range(np.uint64(K)):
                s += np.int32(wrow[k]) * np.int32(act_fm[n, k])
            out[m, n] = s
