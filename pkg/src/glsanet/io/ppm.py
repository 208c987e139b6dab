"""Binary PPM (P6) / PGM (P5) codecs, maxval 255 only."""

from __future__ import annotations

import os
import tempfile

import numpy as np

from ..errors import FormatError


def atomic_write(path, payload: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def quantize(values: np.ndarray) -> np.ndarray:
    """[0,1] reals to bytes, round half up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def encode_pgm(values: np.ndarray) -> bytes:
    v = np.asarray(values)
    if v.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got {v.shape}")
    h, w = v.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + quantize(v).tobytes()


def encode_ppm(image: np.ndarray) -> bytes:
    """[3,H,W] reals in [0,1] -> P6 bytes (interleaved RGB)."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"PPM needs a [3,H,W] array, got {img.shape}")
    _, h, w = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + quantize(img.transpose(1, 2, 0)).tobytes()


def _parse_header(buf: bytes, magic: bytes):
    if buf[:2] != magic:
        raise FormatError(f"expected magic {magic.decode()}, found {buf[:2]!r}", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(buf) and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed header: expected a decimal integer", start)
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("header must end with a single whitespace byte", pos)
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise FormatError(f"non-positive dimensions {w}x{h}", 2)
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}", pos)
    return w, h, pos + 1


def decode_pgm_bytes(buf: bytes) -> np.ndarray:
    """P5 bytes -> uint8 [H,W]."""
    w, h, off = _parse_header(buf, b"P5")
    need = w * h
    if len(buf) - off < need:
        raise FormatError(f"truncated pixel data: need {need} bytes, have {len(buf) - off}", len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=off).reshape(h, w)


def decode_ppm_bytes(buf: bytes) -> np.ndarray:
    """P6 bytes -> float32 [3,H,W] in [0,1]."""
    w, h, off = _parse_header(buf, b"P6")
    need = 3 * w * h
    if len(buf) - off < need:
        raise FormatError(f"truncated pixel data: need {need} bytes, have {len(buf) - off}", len(buf))
    raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off).reshape(h, w, 3)
    return (raw.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def write_pgm(values, path):
    atomic_write(path, encode_pgm(values))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_pgm_bytes(f.read())


def write_ppm(image, path):
    atomic_write(path, encode_ppm(image))


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        try:
            return decode_ppm_bytes(f.read())
        except FormatError as e:
            raise FormatError(f"{path}: {e}") from None
