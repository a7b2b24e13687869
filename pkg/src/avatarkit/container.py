"""Self-describing tensor container: JSON header + raw little-endian blocks.

Layout:  magic ``TBLK1\\n`` | uint64-LE header length | header JSON (utf-8)
| contiguous tensor blocks.  Header records per-tensor dtype, shape, byte
offset (relative to the data section), and byte count, so files can be
authored and inspected by hand.  Writers are deterministic (sorted keys,
blocks ordered by tensor name) which makes save(load(f)) bit-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import LoadError

MAGIC = b"TBLK1\n"

_DTYPES = {
    "<f8": np.dtype("<f8"),
    "<f4": np.dtype("<f4"),
    "<i8": np.dtype("<i8"),
    "<u1": np.dtype("<u1"),
}


def _dtype_tag(arr: np.ndarray) -> str:
    for tag, dt in _DTYPES.items():
        if arr.dtype == dt:
            return tag
    raise LoadError(f"unsupported tensor dtype {arr.dtype!r}; expected one of {sorted(_DTYPES)}")


def write_container(path: str | Path, manifest: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write ``manifest`` plus named tensors to ``path`` atomically."""
    entries = []
    blocks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        tag = _dtype_tag(arr)
        raw = arr.astype(_DTYPES[tag], copy=False).tobytes()
        entries.append(
            {"name": name, "dtype": tag, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blocks.append(raw)
        offset += len(raw)

    header = {"manifest": manifest, "tensors": entries}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for raw in blocks:
            f.write(raw)
    tmp.replace(path)


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container; returns (manifest, tensors). Raises LoadError on corruption."""
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise LoadError(f"{path}: bad magic, not a tensor container")
    if len(data) < len(MAGIC) + 8:
        raise LoadError(f"{path}: truncated header length field at byte {len(data)}")
    (header_len,) = struct.unpack_from("<Q", data, len(MAGIC))
    header_start = len(MAGIC) + 8
    header_end = header_start + header_len
    if len(data) < header_end:
        raise LoadError(f"{path}: truncated header, file ends at byte {len(data)} before {header_end}")
    try:
        header = json.loads(data[header_start:header_end].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise LoadError(f"{path}: header is not valid JSON ({exc})") from exc

    if not isinstance(header, dict) or "manifest" not in header or "tensors" not in header:
        raise LoadError(f"{path}: header missing 'manifest' or 'tensors' field")

    tensors: dict[str, np.ndarray] = {}
    data_start = header_end
    for entry in header["tensors"]:
        for key in ("name", "dtype", "shape", "offset", "nbytes"):
            if key not in entry:
                raise LoadError(f"{path}: tensor entry missing field {key!r}")
        name = entry["name"]
        if entry["dtype"] not in _DTYPES:
            raise LoadError(f"{path}: tensor '{name}' has unsupported dtype {entry['dtype']!r}")
        dt = _DTYPES[entry["dtype"]]
        shape = tuple(int(s) for s in entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if shape else dt.itemsize
        if expected != entry["nbytes"]:
            raise LoadError(f"{path}: tensor '{name}' shape {shape} inconsistent with nbytes {entry['nbytes']}")
        lo = data_start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(data):
            raise LoadError(
                f"{path}: tensor '{name}' block truncated, need bytes [{lo}, {hi}) but file ends at byte {len(data)}"
            )
        tensors[name] = np.frombuffer(data[lo:hi], dtype=dt).reshape(shape).copy()
    return header["manifest"], tensors
