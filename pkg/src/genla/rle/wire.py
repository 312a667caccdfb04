"""Experience-batch wire format (version 1).

All integers little-endian::

    batch   := magic "GLXB" | u16 format_version | u16 state_schema | u32 count | record*
    record  := u32 length | payload[length]
    payload := i64[5] meta (actor, scenario, cell, ue, tti)
             | i32 action | u8 done | u16 S | u16 m | u16 A | f64 priority (NaN = unset)
             | f32[S] state | f64[m] reward | f32[S] next_state | f64[m] omega
             | u8[ceil(A/8)] next_mask (bit-packed, little bit order; A = 0 if absent)

States travel as float32, which is also how the replay buffer stores them.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from ..morl.envelope import Transition

MAGIC = b"GLXB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHI")
_LEN = struct.Struct("<I")
_FIXED = struct.Struct("<5qiBHHHd")


class WireError(ValueError):
    pass


def encode_transition(t):
    state = np.asarray(t.state, dtype="<f4")
    next_state = np.asarray(t.next_state, dtype="<f4")
    reward = np.asarray(t.reward, dtype="<f8")
    omega = np.asarray(t.omega, dtype="<f8")
    mask = b""
    a = 0
    if t.next_mask is not None:
        a = len(t.next_mask)
        mask = np.packbits(np.asarray(t.next_mask, dtype=bool), bitorder="little").tobytes()
    prio = float("nan") if t.priority is None else float(t.priority)
    fixed = _FIXED.pack(*[int(v) for v in t.meta], int(t.action), int(bool(t.done)), len(state),
                        len(reward), a, prio)
    return b"".join([fixed, state.tobytes(), reward.tobytes(), next_state.tobytes(),
                     omega.tobytes(), mask])


def decode_transition(payload):
    *meta, action, done, s, m, a, prio = _FIXED.unpack_from(payload, 0)
    pos = _FIXED.size
    need = pos + 8 * s + 16 * m + math.ceil(a / 8)
    if len(payload) != need:
        raise WireError(f"record length {len(payload)} != expected {need}")

    def take(dtype, n):
        nonlocal pos
        arr = np.frombuffer(payload, dtype=dtype, count=n, offset=pos)
        pos += arr.nbytes
        return arr.copy()

    state = take("<f4", s)
    reward = take("<f8", m)
    next_state = take("<f4", s)
    omega = take("<f8", m)
    mask = None
    if a:
        bits = np.frombuffer(payload, dtype=np.uint8, offset=pos)
        mask = np.unpackbits(bits, bitorder="little")[:a].astype(bool)
    return Transition(state, action, reward, next_state, bool(done), omega, mask,
                      None if math.isnan(prio) else prio, tuple(meta))


def encode_batch(transitions, schema_version=1):
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, schema_version, len(transitions))]
    for t in transitions:
        rec = encode_transition(t)
        parts += [_LEN.pack(len(rec)), rec]
    return b"".join(parts)


def decode_batch(data, expect_schema=None):
    """Decode a batch; returns ``(schema_version, transitions)``."""
    if len(data) < _HEADER.size:
        raise WireError("truncated header")
    magic, version, schema, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise WireError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise WireError(f"unsupported wire format version {version}")
    if expect_schema is not None and schema != expect_schema:
        raise WireError(f"state schema {schema} != expected {expect_schema}")
    pos = _HEADER.size
    out = []
    for _ in range(count):
        if pos + _LEN.size > len(data):
            raise WireError("truncated record length")
        (n,) = _LEN.unpack_from(data, pos)
        pos += _LEN.size
        if pos + n > len(data):
            raise WireError("truncated record")
        out.append(decode_transition(data[pos:pos + n]))
        pos += n
    if pos != len(data):
        raise WireError("trailing bytes after batch")
    return schema, out
