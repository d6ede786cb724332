"""
Streaming tiles and the INT16 block
===================================

The full table for a large layer does not fit in any cache, so it is built
one L1-sized tile at a time and consumed immediately.  Lookups are summed in
INT16 for at most B groups before being widened to INT32.
"""

import numpy as np

from veclut import ActivationView, KernelStats, TernaryMatrix, block_bound, pack_matrix
from veclut.kernel import GemmProblem, config_for_schedule, full_lut_bytes, hierarchical_accumulate, mpgemm, select_tiles
from veclut.packing import make_group_schedule

# what an untiled table would cost for a 4096 x 14436 layer and 512 tokens
n = full_lut_bytes(14436, 512, 4)
print(n, "bytes =", round(n / 2**20, 2), "MiB")

# tile sizes from the cache budget
for g, l1, simd in [(4, 48 * 1024, 256), (5, 64 * 1024, 128), (5, 16 * 1024, 128)]:
    k, nt = select_tiles(g, l1, simd)
    print(f"g={g} L1={l1}: k_tile={k} n_tile={nt} tile bytes={3**g * nt * (k // g) * 2}")

# the INT16 block bound and its worst case
print("B(g=4) =", block_bound(4), " B(g=5) =", block_bound(5))
rows = np.zeros((81, 4), dtype=np.int16)
rows[80] = 4 * 127
print(hierarchical_accumulate(rows, np.full(64, 80), 64, g=4))  # 32512, still below 32767
try:
    hierarchical_accumulate(rows, np.full(65, 80), 65, g=4)
except ValueError as exc:
    print("rejected:", exc)

# the kernel's LUT working set stays at one tile per worker
rng = np.random.default_rng(2)
K, N = 3200, 100
cfg = config_for_schedule(make_group_schedule(K, "mixed"), threads=2)
W = TernaryMatrix(rng.integers(-1, 2, (256, K)))
A = ActivationView(rng.integers(-127, 128, (K, N)))
st = KernelStats()
mpgemm(GemmProblem(pack_matrix(W, "mixed", cfg), A, cfg), stats=st)
print("peak LUT bytes", st.peak_lut_bytes, "vs full table", full_lut_bytes(K, N, 5))
