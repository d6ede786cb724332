"""
Throughput against the baselines
================================

Times the vector-LUT kernel, the per-token scalar-LUT kernel and a
multiply-add kernel over a token sweep.  Absolute numbers depend on the
machine; the interesting part is how the vector-LUT kernel scales with N.
"""

import sys

from veclut import bench

shapes = bench.expand_shapes([(320, 3200), (4096, 4096)], (1, 8, 32, 128))
records = bench.bench_suite(shapes, repeats=5)
bench.write_csv(records, sys.stdout)

print()
for (M, K, N) in shapes:
    row = {r.kernel: r for r in records if (r.M, r.K, r.N) == (M, K, N)}
    v = row["vector_lut"].runs_per_s
    print(f"{M}x{K}x{N:<4} vec/scalar {v / row['scalar_lut'].runs_per_s:5.1f}x   "
          f"vec/mad {v / row['naive_mad'].runs_per_s:5.1f}x   "
          f"tokens/s {v * N:12.0f}")
