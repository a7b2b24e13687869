"""Wire protocol for the guidance-oracle service (server side).

Envelope: {"schema_version", "request_id", "capability", "params",
"tensors": {name: {"shape", "dtype", "data": base64}}}.  Responses echo the
request id and carry either "result" (params + tensors) or "error"
{code, message, status, field?}.  This module is the bridge's own statement
of the contract; clients hold an equivalent one.
"""

from __future__ import annotations

import base64
import uuid

import numpy as np

SCHEMA_VERSION = "1.0"
MAX_PAYLOAD_BYTES = 64 * 1024 * 1024

DTYPES = {"float32": np.float32, "float64": np.float64, "int64": np.int64, "uint8": np.uint8}

# capability -> required request params / tensor ranks / response spec
CAPABILITIES: dict[str, dict] = {
    "generate": {
        "params": {"prompt": str, "seed": int, "height": int, "width": int},
        "request": {"depth": (2, False), "current": (3, False), "known_mask": (2, False)},
        "response": {"image": (3, True)},
    },
    "denoise": {
        "params": {"prompt": str, "t": int, "mode": str},
        "request": {"q_t": (3, True), "q": (3, False), "eps": (3, False)},
        "response": {"eps_hat": (3, True)},
        "response_params": {"u_t": float},
    },
    "segment": {
        "params": {"keyword": str},
        "request": {"image": (3, True)},
        "response": {"mask": (2, True)},
    },
    "embed_image": {
        "params": {},
        "request": {"image": (3, True)},
        "response": {"embedding": (1, True), "similarity_grad": (3, False)},
    },
    "embed_text": {
        "params": {"text": str},
        "request": {},
        "response": {"embedding": (1, True)},
    },
    "encode": {
        "params": {},
        "request": {"image": (3, True)},
        "response": {"latent": (3, True)},
    },
    "decode": {
        "params": {},
        "request": {"latent": (3, True)},
        "response": {"image": (3, True)},
    },
    "landmarks": {
        "params": {},
        "request": {"image": (3, True)},
        "response": {"points": (2, True), "confidence": (1, False)},
    },
}


class WireError(Exception):
    def __init__(self, message: str, field: str | None = None, status: int = 400):
        super().__init__(message)
        self.field = field
        self.status = status


def encode_tensor(array: np.ndarray) -> dict:
    arr = np.asarray(array)
    if arr.dtype == np.float32:
        tag = "float32"
    elif arr.dtype in (np.int64, np.int32):
        arr, tag = arr.astype(np.int64), "int64"
    elif arr.dtype == np.uint8:
        tag = "uint8"
    else:
        arr, tag = arr.astype(np.float64), "float64"
    return {
        "shape": [int(s) for s in arr.shape],
        "dtype": tag,
        "data": base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode("ascii"),
    }


def decode_tensor(entry: dict, field: str) -> np.ndarray:
    if not isinstance(entry, dict):
        raise WireError(f"{field}: tensor entry must be an object", field=field)
    for key in ("shape", "dtype", "data"):
        if key not in entry:
            raise WireError(f"{field}: tensor entry missing {key!r}", field=f"{field}.{key}")
    if entry["dtype"] not in DTYPES:
        raise WireError(f"{field}: unsupported dtype {entry['dtype']!r}", field=f"{field}.dtype")
    dt = np.dtype(DTYPES[entry["dtype"]])
    try:
        raw = base64.b64decode(entry["data"])
    except Exception as exc:
        raise WireError(f"{field}: invalid base64 payload ({exc})", field=f"{field}.data") from exc
    shape = tuple(int(s) for s in entry["shape"])
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if shape else dt.itemsize
    if len(raw) != expected:
        raise WireError(
            f"{field}: payload length {len(raw)} does not match shape {shape}", field=f"{field}.data"
        )
    return np.frombuffer(raw, dtype=dt).reshape(shape).copy()


def parse_request(body: dict, capability: str) -> tuple[dict, dict]:
    """Validate an incoming request; returns (params, tensors)."""
    if not isinstance(body, dict):
        raise WireError("request body must be a JSON object")
    if body.get("schema_version") != SCHEMA_VERSION:
        raise WireError(
            f"schema_version {body.get('schema_version')!r} unsupported (expected {SCHEMA_VERSION})",
            field="schema_version",
        )
    if body.get("capability") not in (None, capability):
        raise WireError(
            f"capability {body.get('capability')!r} does not match endpoint {capability!r}",
            field="capability",
        )
    if capability not in CAPABILITIES:
        raise WireError(f"unknown capability {capability!r}", status=404)
    spec = CAPABILITIES[capability]
    params = body.get("params", {})
    if not isinstance(params, dict):
        raise WireError("params must be an object", field="params")
    for name, typ in spec["params"].items():
        if name not in params:
            raise WireError(f"missing required param {name!r}", field=f"params.{name}")
        if typ in (int, float) and (isinstance(params[name], bool) or not isinstance(params[name], (int, float))):
            raise WireError(f"param {name!r} must be numeric", field=f"params.{name}")
        if typ is str and not isinstance(params[name], str):
            raise WireError(f"param {name!r} must be a string", field=f"params.{name}")
    tensors = {}
    raw_tensors = body.get("tensors", {})
    if not isinstance(raw_tensors, dict):
        raise WireError("tensors must be an object", field="tensors")
    for name, (rank, required) in spec["request"].items():
        if name not in raw_tensors:
            if required:
                raise WireError(f"missing required tensor {name!r}", field=f"tensors.{name}")
            continue
        arr = decode_tensor(raw_tensors[name], field=f"tensors.{name}")
        if arr.ndim != rank:
            raise WireError(
                f"tensor {name!r} must have rank {rank}, got {arr.ndim}", field=f"tensors.{name}"
            )
        tensors[name] = arr
    return params, tensors


def response(body: dict, params: dict | None = None, tensors: dict | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "request_id": body.get("request_id") or uuid.uuid4().hex,
        "ok": True,
        "result": {
            "params": params or {},
            "tensors": {k: encode_tensor(v) for k, v in (tensors or {}).items()},
        },
    }


def error_response(body: dict, code: str, message: str, status: int = 400, field: str | None = None) -> dict:
    err: dict = {"code": code, "message": message, "status": status}
    if field:
        err["field"] = field
    return {
        "schema_version": SCHEMA_VERSION,
        "request_id": (body or {}).get("request_id", ""),
        "ok": False,
        "error": err,
    }
