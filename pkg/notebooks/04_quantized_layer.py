"""
A quantised linear layer end to end
===================================

FP32 activations are quantised per token to INT8, multiplied exactly by
the packed ternary weights, and rescaled.  The only error left is the
activation rounding.
"""

import numpy as np

from veclut import TernaryMatrix, apply_scales, mpgemm, naive_gemm_f32, pack_matrix, quantize_activation
from veclut.bench import demo_layer
from veclut.kernel import GemmProblem, config_for_schedule
from veclut.packing import make_group_schedule

rng = np.random.default_rng(3)
M, K, N = 128, 3200, 16
W = TernaryMatrix(rng.integers(-1, 2, (M, K)), weight_scale=0.02)
x = rng.standard_normal((K, N)).astype(np.float32)

q = quantize_activation(x)
print("token scales", q.token_scales[:4])

cfg = config_for_schedule(make_group_schedule(K, "i1"))
out = mpgemm(GemmProblem(pack_matrix(W, "i1", cfg), q, cfg))
y = apply_scales(out, W.weight_scale, q.token_scales).data_f32

ref = naive_gemm_f32(W.data * np.float32(W.weight_scale), x)
err = np.abs(y - ref)
print("max abs error", err.max(), " relative to max |y|", err.max() / np.abs(ref).max())

# per-element bound: weight_scale * sum|W| * token_scale / 2
bound = W.weight_scale * np.abs(W.data).sum(axis=1)[:, None] * q.token_scales[None, :] / 2
print("worst error / bound", (err / bound).max())

print(demo_layer(3200, 320, 32))
