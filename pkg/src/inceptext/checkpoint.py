"""Flat binary checkpoint of named float32 arrays.

Layout: the 8-byte magic ``INCPDET1`` followed by entries, each
``uint32 name_len | name (utf-8) | uint32 rank | uint32 extents[rank] | float32 data``,
all little-endian, until end of file.
"""
from __future__ import annotations

import struct

import numpy as np

from .geometry import atomic_write_bytes

MAGIC = b"INCPDET1"


def dump_checkpoint(arrays: dict) -> bytes:
    chunks = [MAGIC]
    for name in sorted(arrays):
        a = np.asarray(getattr(arrays[name], "data", arrays[name]), dtype="<f4")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(np.ascontiguousarray(a).tobytes())
    return b"".join(chunks)


def save_checkpoint(path, arrays: dict) -> None:
    atomic_write_bytes(path, dump_checkpoint(arrays))


def parse_checkpoint(data: bytes) -> dict:
    if data[:8] != MAGIC:
        raise ValueError(f"not an IncepText checkpoint (magic {data[:8]!r})")
    out = {}
    pos = 8
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            nbytes = 4 * count
            if pos + nbytes > len(data):
                raise ValueError("truncated checkpoint")
            out[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += nbytes
    except struct.error as e:
        raise ValueError(f"corrupt checkpoint: {e}") from None
    return out


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
