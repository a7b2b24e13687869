"""Minimal PNG reader/writer supporting 8- and 16-bit grayscale and RGB.

Textures persist as 16-bit PNG; render outputs as 8-bit.  Kept in-tree so
artifact bytes stay reproducible (fixed zlib level, filter type 0) and the
package needs no imaging dependency.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import LoadError

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def write_png(path: str | Path, image: np.ndarray) -> None:
    """Write ``image`` (H,W) or (H,W,3), dtype uint8 or uint16, to ``path``."""
    img = np.asarray(image)
    if img.ndim == 2:
        color_type = 0
        channels = 1
    elif img.ndim == 3 and img.shape[2] == 3:
        color_type = 2
        channels = 3
    else:
        raise ValueError(f"expected (H,W) or (H,W,3) image, got shape {img.shape}")
    if img.dtype == np.uint8:
        depth = 8
    elif img.dtype == np.uint16:
        depth = 16
    else:
        raise ValueError(f"expected uint8 or uint16 image, got dtype {img.dtype}")

    h, w = img.shape[:2]
    # PNG samples are big-endian; filter byte 0 prefixes every scanline.
    raw = img.astype(">u2" if depth == 16 else "u1").tobytes()
    stride = w * channels * (depth // 8)
    lines = b"".join(b"\x00" + raw[y * stride : (y + 1) * stride] for y in range(h))

    ihdr = struct.pack(">IIBBBBB", w, h, depth, color_type, 0, 0, 0)
    payload = _SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(lines, 6)) + _chunk(b"IEND", b"")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def _defilter(scanlines: bytes, h: int, stride: int, bpp: int) -> np.ndarray:
    out = np.zeros((h, stride), dtype=np.uint8)
    pos = 0
    for y in range(h):
        ftype = scanlines[pos]
        pos += 1
        row = np.frombuffer(scanlines, dtype=np.uint8, count=stride, offset=pos).copy()
        pos += stride
        prev = out[y - 1] if y > 0 else np.zeros(stride, dtype=np.uint8)
        if ftype == 0:
            pass
        elif ftype == 1:
            for x in range(bpp, stride):
                row[x] = (row[x] + row[x - bpp]) & 0xFF
        elif ftype == 2:
            row = (row.astype(np.int32) + prev).astype(np.uint8)
        elif ftype == 3:
            for x in range(stride):
                left = row[x - bpp] if x >= bpp else 0
                row[x] = (row[x] + ((int(left) + int(prev[x])) >> 1)) & 0xFF
        elif ftype == 4:
            for x in range(stride):
                a = int(row[x - bpp]) if x >= bpp else 0
                b = int(prev[x])
                c = int(prev[x - bpp]) if x >= bpp else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                row[x] = (row[x] + pred) & 0xFF
        else:
            raise LoadError(f"unsupported PNG filter type {ftype}")
        out[y] = row
    return out


def read_png(path: str | Path) -> np.ndarray:
    """Read a PNG written by :func:`write_png` (plus standard filter variants)."""
    data = Path(path).read_bytes()
    if not data.startswith(_SIGNATURE):
        raise LoadError(f"{path}: not a PNG file")
    pos = len(_SIGNATURE)
    ihdr = None
    idat = b""
    while pos < len(data):
        (length,) = struct.unpack_from(">I", data, pos)
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if ihdr is None:
        raise LoadError(f"{path}: missing IHDR chunk")
    w, h, depth, color_type, comp, filt, interlace = ihdr
    if comp != 0 or filt != 0 or interlace != 0:
        raise LoadError(f"{path}: unsupported PNG encoding options")
    if color_type == 0:
        channels = 1
    elif color_type == 2:
        channels = 3
    else:
        raise LoadError(f"{path}: unsupported PNG color type {color_type}")
    if depth not in (8, 16):
        raise LoadError(f"{path}: unsupported PNG bit depth {depth}")

    bpp = channels * (depth // 8)
    stride = w * bpp
    raw = _defilter(zlib.decompress(idat), h, stride, bpp)
    if depth == 16:
        img = raw.reshape(h, stride).view(">u2").astype(np.uint16)
        img = img.reshape(h, w, channels)
    else:
        img = raw.reshape(h, w, channels)
    return img[..., 0] if channels == 1 else img
