"""
Packing ternary weights into bytes
==================================

Groups of 4 or 5 trits become one byte each, so the byte can be used
directly as a row index into a lookup table.
"""

import numpy as np

from veclut import TernaryMatrix, bits_per_weight, make_group_schedule, pack_group, pack_matrix, unpack_index, unpack_matrix

# one group: digit r of the index holds trit r, least significant first
print(pack_group((1, 0, 1, -1)))   # 23
print(unpack_index(23, 4))         # (1, 0, 1, -1)
print(pack_group((0, 0, 0, 0)), pack_group((0,) * 5))  # the all-zero groups: 40 and 121

# three schedules for the same K
for mode in ("i2", "i1", "mixed"):
    try:
        s = make_group_schedule(4096, mode)
    except ValueError as exc:
        print(mode, "->", exc)
        continue
    print(mode, len(s), "groups,", round(bits_per_weight(s), 4), "bits/weight")

# mixed packing fills with g=5 first and tops up with g=4
s = make_group_schedule(4096, "mixed")
print(s.groups.count(5), "fives,", s.groups.count(4), "fours")

# packing a matrix; rows are padded to a multiple of 32 with the zero index
rng = np.random.default_rng(0)
W = TernaryMatrix(rng.integers(-1, 2, (50, 23)), weight_scale=0.1)
P = pack_matrix(W, "mixed")
print(P.M, P.padded_M, P.payload.size, "bytes for", W.data.size, "weights")
assert unpack_matrix(P) == W
