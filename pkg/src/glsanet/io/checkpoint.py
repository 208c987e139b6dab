"""GLSACKPT binary checkpoints.

Little-endian layout::

    b"GLSACKPT"  u32 version=1  u32 count
    per tensor (names in lexicographic order):
        u16 name_len  name (UTF-8)  u8 rank  u32 dims[rank]  f32 data[prod(dims)]
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError
from ..params import ParamSet
from ..tensor import Tensor
from .ppm import atomic_write

MAGIC = b"GLSACKPT"
VERSION = 1


def encode_checkpoint(params) -> bytes:
    items = params.items() if isinstance(params, ParamSet) else sorted(params.items())
    out = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, t in items:
        data = t.data if isinstance(t, Tensor) else np.asarray(t)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"parameter name too long: {name[:40]}...")
        if data.ndim > 0xFF:
            raise ValueError(f"rank {data.ndim} too large for {name}")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", data.ndim))
        out.append(struct.pack(f"<{data.ndim}I", *data.shape))
        out.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> ParamSet:
    def need(pos, n, what):
        if pos + n > len(buf):
            raise FormatError(f"truncated checkpoint while reading {what}", pos)

    need(0, 16, "header")
    if buf[:8] != MAGIC:
        raise FormatError(f"bad magic {buf[:8]!r}", 0)
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    pos = 16
    params = ParamSet()
    for _ in range(count):
        need(pos, 2, "name length")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(pos, nlen, "name")
        try:
            name = buf[pos:pos + nlen].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid UTF-8", pos) from None
        if name in params:
            raise FormatError(f"duplicate tensor name {name!r}", pos)
        pos += nlen
        need(pos, 1, "rank")
        rank = buf[pos]
        pos += 1
        need(pos, 4 * rank, "dims")
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        need(pos, 4 * size, f"data of {name!r}")
        data = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * size
        params[name] = Tensor(data, requires_grad=True, name=name)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last tensor", pos)
    return params


def save_checkpoint(params, path):
    atomic_write(path, encode_checkpoint(params))


def load_checkpoint(path) -> ParamSet:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
