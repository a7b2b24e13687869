"""Oracle wire protocol: JSON messages with base64 tensor payloads.

One capability per endpoint; requests and responses share the envelope

    {"schema_version": "...", "request_id": "...", "capability": "...",
     "params": {...}, "tensors": {name: {"shape": [...], "dtype": "...",
     "data": "<base64>"}}}

Responses echo the request id and either carry a ``result`` of the same
(params, tensors) shape or an ``error`` {code, message, field}.  The schema
here is the contract both the in-process synthetic oracle (served for
conformance testing) and any network bridge must satisfy.
"""

from __future__ import annotations

import base64
import uuid

import numpy as np

from .errors import OracleError

SCHEMA_VERSION = "1.0"
MAX_PAYLOAD_BYTES = 64 * 1024 * 1024

_DTYPES = {"float32": np.float32, "float64": np.float64, "int64": np.int64, "uint8": np.uint8}

# Per-capability request/response tensor specs: name -> (rank, required).
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


def encode_tensor(array) -> dict:
    arr = np.asarray(array)
    if arr.dtype == np.float64:
        dtype = "float64"
    elif arr.dtype == np.float32:
        dtype = "float32"
    elif arr.dtype in (np.int64, np.int32):
        arr = arr.astype(np.int64)
        dtype = "int64"
    elif arr.dtype == np.uint8:
        dtype = "uint8"
    elif arr.dtype == bool:
        arr = arr.astype(np.uint8)
        dtype = "uint8"
    else:
        arr = arr.astype(np.float64)
        dtype = "float64"
    return {
        "shape": [int(s) for s in arr.shape],
        "dtype": dtype,
        "data": base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode("ascii"),
    }


def decode_tensor(entry: dict, field: str = "tensor") -> np.ndarray:
    for key in ("shape", "dtype", "data"):
        if key not in entry:
            raise OracleError(f"{field}: tensor entry missing {key!r}")
    if entry["dtype"] not in _DTYPES:
        raise OracleError(f"{field}: unsupported dtype {entry['dtype']!r}")
    dt = np.dtype(_DTYPES[entry["dtype"]])
    raw = base64.b64decode(entry["data"])
    shape = tuple(int(s) for s in entry["shape"])
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if shape else dt.itemsize
    if len(raw) != expected:
        raise OracleError(f"{field}: payload length {len(raw)} does not match shape {shape}")
    return np.frombuffer(raw, dtype=dt).reshape(shape).copy()


def build_request(capability: str, params: dict | None = None, tensors: dict | None = None,
                  request_id: str | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "request_id": request_id or uuid.uuid4().hex,
        "capability": capability,
        "params": params or {},
        "tensors": {k: encode_tensor(v) for k, v in (tensors or {}).items()},
    }


def build_response(request: dict, params: dict | None = None, tensors: dict | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "request_id": request.get("request_id", ""),
        "ok": True,
        "result": {
            "params": params or {},
            "tensors": {k: encode_tensor(v) for k, v in (tensors or {}).items()},
        },
    }


def build_error(request: dict, code: str, message: str, field: str | None = None, status: int = 400) -> dict:
    err = {"code": code, "message": message, "status": status}
    if field:
        err["field"] = field
    return {
        "schema_version": SCHEMA_VERSION,
        "request_id": request.get("request_id", ""),
        "ok": False,
        "error": err,
    }


def validate_envelope(message: dict, *, side: str) -> list[str]:
    """Structural checks shared by requests and responses; returns problems."""
    problems = []
    if not isinstance(message, dict):
        return [f"{side} is not a JSON object"]
    if message.get("schema_version") != SCHEMA_VERSION:
        problems.append(
            f"{side}.schema_version is {message.get('schema_version')!r}, expected {SCHEMA_VERSION!r}"
        )
    if not isinstance(message.get("request_id"), str) or not message.get("request_id"):
        problems.append(f"{side}.request_id missing or empty")
    return problems


def validate_request(message: dict) -> list[str]:
    problems = validate_envelope(message, side="request")
    cap = message.get("capability")
    if cap not in CAPABILITIES:
        problems.append(f"request.capability {cap!r} unknown")
        return problems
    spec = CAPABILITIES[cap]
    params = message.get("params", {})
    for name, typ in spec.get("params", {}).items():
        if name not in params:
            problems.append(f"request.params.{name} missing")
        elif typ in (int, float) and not isinstance(params[name], (int, float)):
            problems.append(f"request.params.{name} must be numeric")
        elif typ is str and not isinstance(params[name], str):
            problems.append(f"request.params.{name} must be a string")
    tensors = message.get("tensors", {})
    for name, (rank, required) in spec.get("request", {}).items():
        if name not in tensors:
            if required:
                problems.append(f"request.tensors.{name} missing")
            continue
        try:
            arr = decode_tensor(tensors[name], field=f"request.tensors.{name}")
            if arr.ndim != rank:
                problems.append(f"request.tensors.{name} must have rank {rank}, got {arr.ndim}")
        except OracleError as exc:
            problems.append(str(exc))
    return problems


def validate_response(capability: str, message: dict, request_id: str | None = None) -> list[str]:
    problems = validate_envelope(message, side="response")
    if request_id is not None and message.get("request_id") != request_id:
        problems.append("response.request_id does not echo the request")
    if message.get("ok") is False:
        err = message.get("error", {})
        if not isinstance(err, dict) or "code" not in err or "message" not in err:
            problems.append("response.error must carry code and message")
        return problems
    if message.get("ok") is not True:
        problems.append("response.ok must be true or false")
        return problems
    result = message.get("result")
    if not isinstance(result, dict):
        return problems + ["response.result missing"]
    spec = CAPABILITIES.get(capability, {})
    tensors = result.get("tensors", {})
    for name, (rank, required) in spec.get("response", {}).items():
        if name not in tensors:
            if required:
                problems.append(f"response.result.tensors.{name} missing")
            continue
        try:
            arr = decode_tensor(tensors[name], field=f"response.result.tensors.{name}")
            if arr.ndim != rank:
                problems.append(f"response.result.tensors.{name} must have rank {rank}, got {arr.ndim}")
        except OracleError as exc:
            problems.append(str(exc))
    for name, typ in spec.get("response_params", {}).items():
        if name not in result.get("params", {}):
            problems.append(f"response.result.params.{name} missing")
    return problems


def validate_health(payload: dict) -> list[str]:
    problems = []
    if payload.get("schema_version") != SCHEMA_VERSION:
        problems.append("health.schema_version mismatch")
    if not isinstance(payload.get("capabilities"), list):
        problems.append("health.capabilities must be a list")
    sched = payload.get("noise_schedule")
    if not isinstance(sched, dict):
        problems.append("health.noise_schedule missing")
    else:
        for key in ("kind", "num_timesteps", "beta_start", "beta_end"):
            if key not in sched:
                problems.append(f"health.noise_schedule.{key} missing")
    codec = payload.get("codec")
    if not isinstance(codec, dict) or "spatial_factor" not in codec:
        problems.append("health.codec.spatial_factor missing")
    return problems
