import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from veclut.core import KernelConfig, TernaryMatrix
from veclut.errors import CorruptPayload
from veclut.fileformat import HEADER, from_bytes, read_packed, to_bytes, write_packed
from veclut.packing import pack_matrix, unpack_matrix


def packed(rng, M=33, K=23, mode="mixed", scale=0.75):
    W = TernaryMatrix(rng.integers(-1, 2, (M, K)), scale)
    return W, pack_matrix(W, mode, KernelConfig(k_tile=10, l1_bytes=1 << 20))


def test_header_layout_is_little_endian(rng):
    W, P = packed(rng)
    buf = to_bytes(P)
    assert buf[:4] == b"VLT1"
    assert HEADER.size == 27
    # version, M, K, mode, m_tile, k_tile, scale, schedule_len read by hand
    assert struct.unpack_from("<H", buf, 4) == (1,)
    assert struct.unpack_from("<II", buf, 6) == (33, 23)
    assert buf[14] == 2
    assert struct.unpack_from("<HHfI", buf, 15) == (32, 10, 0.75, 5)
    assert list(buf[27:32]) == [5, 5, 5, 4, 4]
    assert struct.unpack_from("<Q", buf, 32) == (P.payload.size,)
    assert len(buf) == 40 + P.payload.size


@given(
    st.integers(1, 80),
    st.sampled_from([(20, "i1"), (20, "i2"), (23, "mixed"), (57, "mixed")]),
    st.integers(0, 2**31),
)
def test_bytes_roundtrip(M, k_mode, seed):
    K, mode = k_mode
    W, P = packed(np.random.default_rng(seed), M, K, mode)
    Q = from_bytes(to_bytes(P))
    assert (Q.M, Q.K, Q.mode, Q.k_tile, Q.m_tile, Q.schedule) == (P.M, P.K, P.mode, P.k_tile, P.m_tile, P.schedule)
    assert np.array_equal(Q.payload, P.payload)
    assert unpack_matrix(Q) == W


def test_file_roundtrip(tmp_path, rng):
    W, P = packed(rng)
    path = tmp_path / "w.vlt"
    assert write_packed(path, P) == path.stat().st_size
    assert unpack_matrix(read_packed(path)) == W


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"XLT1" + b[4:],
        lambda b: b[:4] + b"\x02\x00" + b[6:],
        lambda b: b[:14] + b"\x07" + b[15:],
        lambda b: b[:27] + b"\x03" + b[28:],
        lambda b: b[:-1],
        lambda b: b + b"\x00",
        lambda b: b[:20],
        lambda b: b[:-1] + b"\xff",
    ],
    ids=["magic", "version", "mode", "group-size", "truncated", "trailing", "short", "bad-index"],
)
def test_corrupt_files_rejected(mutate, rng):
    _, P = packed(rng)
    with pytest.raises(CorruptPayload):
        from_bytes(mutate(to_bytes(P)))


def test_schedule_must_match_mode(rng):
    _, P = packed(rng, K=20, mode="i1")
    buf = bytearray(to_bytes(P))
    buf[14] = 0  # claim I2 while the schedule holds fives
    with pytest.raises(CorruptPayload):
        from_bytes(bytes(buf))
