"""On-disk packed-weight format.

Little-endian throughout::

    magic         4s   b"VLT1"
    version       u16
    M, K          u32, u32
    mode          u8   0=I2, 1=I1, 2=Mixed
    m_tile        u16
    k_tile        u16  input features per K-tile
    weight_scale  f32
    schedule_len  u32
    schedule      schedule_len bytes, one group size each
    payload_len   u64
    payload       payload_len bytes, tile-permuted
"""

from __future__ import annotations

import os
import struct
from typing import Union

import numpy as np

from .core import GroupSchedule, PackedWeights, PackingMode
from .errors import CorruptPayload
from .packing import check_payload, make_group_schedule

MAGIC = b"VLT1"
VERSION = 1
HEADER = struct.Struct("<4sHIIBHHfI")
PAYLOAD_LEN = struct.Struct("<Q")

PathLike = Union[str, "os.PathLike[str]"]


def to_bytes(P: PackedWeights) -> bytes:
    if P.m_tile > 0xFFFF or P.k_tile > 0xFFFF:
        raise ValueError("m_tile and k_tile must fit in 16 bits")
    schedule = bytes(P.schedule.groups)
    head = HEADER.pack(
        MAGIC, VERSION, P.M, P.K, P.mode.value, P.m_tile, P.k_tile,
        P.weight_scale, len(schedule),
    )
    return head + schedule + PAYLOAD_LEN.pack(P.payload.size) + P.payload.tobytes()


def from_bytes(buf: bytes) -> PackedWeights:
    if len(buf) < HEADER.size:
        raise CorruptPayload(f"file is {len(buf)} bytes, shorter than the {HEADER.size}-byte header")
    magic, version, M, K, mode, m_tile, k_tile, scale, n_sched = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CorruptPayload(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptPayload(f"unsupported version {version}")
    try:
        mode = PackingMode(mode)
    except ValueError:
        raise CorruptPayload(f"unknown packing mode {mode}") from None

    pos = HEADER.size
    if len(buf) < pos + n_sched + PAYLOAD_LEN.size:
        raise CorruptPayload("file truncated inside the schedule")
    groups = tuple(buf[pos : pos + n_sched])
    pos += n_sched
    if any(g not in (4, 5) for g in groups):
        raise CorruptPayload("schedule holds a group size other than 4 or 5")
    schedule = GroupSchedule(groups)
    if sum(groups) != K or schedule != make_group_schedule(K, mode):
        raise CorruptPayload(f"schedule does not match K={K} under mode {mode.name}")

    (n_payload,) = PAYLOAD_LEN.unpack_from(buf, pos)
    pos += PAYLOAD_LEN.size
    if len(buf) != pos + n_payload:
        raise CorruptPayload(f"payload_len={n_payload} but {len(buf) - pos} bytes follow")
    payload = np.frombuffer(buf, dtype=np.uint8, count=n_payload, offset=pos).copy()
    try:
        P = PackedWeights(M, K, schedule, k_tile, m_tile, payload, float(scale), mode)
    except ValueError as exc:
        raise CorruptPayload(str(exc)) from None
    check_payload(P)
    return P


def write_packed(path: PathLike, P: PackedWeights) -> int:
    data = to_bytes(P)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_packed(path: PathLike) -> PackedWeights:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
