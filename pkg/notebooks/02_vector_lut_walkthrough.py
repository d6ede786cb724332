"""
One lookup, many tokens
=======================

A sub-table for g activation rows holds every signed sum of those rows.
With the token axis innermost, one weight byte selects a whole row of
partial sums: one per token.
"""

import numpy as np

from veclut import ActivationView, KernelStats, TernaryMatrix, pack_matrix
from veclut.kernel import GemmProblem, config_for_schedule, mpgemm
from veclut.packing import make_group_schedule
from veclut.precompute import OpCounter, precompute_topological, precompute_vanilla
from veclut.reference import naive_gemm_int, scalar_lut_gemm

rng = np.random.default_rng(1)

# a sub-table for g=4 rows and 8 tokens
a = rng.integers(-127, 128, (4, 8)).astype(np.int8)
table = precompute_topological(a)
print(table.shape)        # (81, 8)
print(table[40])          # all-zero weights -> zeros
print(table[80], a.sum(axis=0))  # all +1 -> column sums

# the topological build reuses earlier entries: one add or sub per entry
van, top = OpCounter(), OpCounter()
precompute_vanilla(a, counter=van)
precompute_topological(a, counter=top)
print("vanilla ops", van.ops, "topological ops", top.ops)

# whole GeMM, checked against the plain integer product
M, K, N = 64, 320, 32
W = TernaryMatrix(rng.integers(-1, 2, (M, K)))
A = ActivationView(rng.integers(-127, 128, (K, N)))
cfg = config_for_schedule(make_group_schedule(K, "i1"))
P = pack_matrix(W, "i1", cfg)

vec, sca = KernelStats(), KernelStats()
out = mpgemm(GemmProblem(P, A, cfg), stats=vec)
scalar_lut_gemm(P, A, stats=sca)
assert np.array_equal(out.data_i32, naive_gemm_int(W, A).data_i32)
print("vector lookups", vec.lookups, "scalar lookups", sca.lookups, "ratio", sca.lookups // vec.lookups)
