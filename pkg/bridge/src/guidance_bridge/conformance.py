"""Golden-fixture conformance suite for oracle endpoints.

Replays the fixture requests against an endpoint and validates response
SCHEMAS (shapes, dtypes, required fields, id echo), never values: stochastic
capabilities may answer anything well-formed.  The same suite must pass
against a real bridge and against the client package's synthetic oracle
served over HTTP.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import wire


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class ConformanceReport:
    endpoint: str
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def add(self, name: str, ok: bool, detail: str = ""):
        self.checks.append(Check(name=name, ok=ok, detail=detail))

    def to_json(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "passed": self.passed,
            "checks": [{"name": c.name, "ok": c.ok, "detail": c.detail} for c in self.checks],
        }


def load_fixtures() -> list[dict]:
    out = []
    root = resources.files("guidance_bridge") / "fixtures"
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            out.append(json.loads(entry.read_text()))
    return out


class HttpTransport:
    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def get(self, path: str) -> tuple[int, dict]:
        try:
            with urllib.request.urlopen(self.endpoint + path, timeout=self.timeout) as resp:
                return resp.status, json.loads(resp.read().decode())
        except urllib.error.HTTPError as exc:
            return exc.code, json.loads(exc.read().decode())

    def post(self, path: str, body: dict) -> tuple[int, dict]:
        data = json.dumps(body).encode()
        req = urllib.request.Request(
            self.endpoint + path, data=data, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status, json.loads(resp.read().decode())
        except urllib.error.HTTPError as exc:
            try:
                return exc.code, json.loads(exc.read().decode())
            except json.JSONDecodeError:
                return exc.code, {}


def _validate_result(capability: str, payload: dict, request_id: str) -> list[str]:
    problems = []
    if payload.get("schema_version") != wire.SCHEMA_VERSION:
        problems.append("schema_version mismatch")
    if payload.get("request_id") != request_id:
        problems.append("request_id not echoed")
    if payload.get("ok") is not True:
        problems.append(f"ok != true: {payload.get('error')}")
        return problems
    result = payload.get("result", {})
    tensors = result.get("tensors", {})
    spec = wire.CAPABILITIES[capability]
    for name, (rank, required) in spec["response"].items():
        if name not in tensors:
            if required:
                problems.append(f"response tensor {name!r} missing")
            continue
        try:
            arr = wire.decode_tensor(tensors[name], field=name)
        except wire.WireError as exc:
            problems.append(str(exc))
            continue
        if arr.ndim != rank:
            problems.append(f"response tensor {name!r} rank {arr.ndim} != {rank}")
        if not np.isfinite(arr.astype(np.float64)).all():
            problems.append(f"response tensor {name!r} contains non-finite values")
    for name in spec.get("response_params", {}):
        if name not in result.get("params", {}):
            problems.append(f"response param {name!r} missing")
    return problems


def _expected_shapes_ok(capability: str, fixture: dict, payload: dict) -> list[str]:
    """Capability-specific shape relations between request and response."""
    problems = []
    tensors = payload.get("result", {}).get("tensors", {})
    params = fixture.get("params", {})

    def shape(name):
        return tuple(tensors[name]["shape"]) if name in tensors else None

    if capability == "generate":
        want = (int(params["height"]), int(params["width"]), 3)
        if shape("image") != want:
            problems.append(f"image shape {shape('image')} != {want}")
    elif capability == "denoise":
        q_t = tuple(fixture["tensors"]["q_t"]["shape"])
        if shape("eps_hat") != q_t:
            problems.append(f"eps_hat shape {shape('eps_hat')} != q_t shape {q_t}")
    elif capability == "segment":
        img = tuple(fixture["tensors"]["image"]["shape"])
        if shape("mask") != img[:2]:
            problems.append(f"mask shape {shape('mask')} != image spatial {img[:2]}")
        arr = wire.decode_tensor(tensors["mask"], field="mask")
        if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
            problems.append("mask values outside [0, 1]")
    elif capability in ("encode", "decode"):
        pass  # spatial factor checked against /health below
    return problems


def run_suite(endpoint: str, transport=None) -> ConformanceReport:
    transport = transport or HttpTransport(endpoint)
    report = ConformanceReport(endpoint=endpoint)

    status, health = transport.get("/health")
    schedule_ok = (
        status == 200
        and isinstance(health.get("noise_schedule"), dict)
        and {"kind", "num_timesteps", "beta_start", "beta_end"}
        <= set(health.get("noise_schedule", {}))
    )
    report.add("health: reachable and advertises the noise schedule", schedule_ok, json.dumps(health)[:200])
    codec_ok = isinstance(health.get("codec"), dict) and "spatial_factor" in health.get("codec", {})
    report.add("health: advertises codec spatial factor", codec_ok)
    caps = set(health.get("capabilities", []))

    factor = int(health.get("codec", {}).get("spatial_factor", 1)) if codec_ok else 1

    for fixture in load_fixtures():
        capability = fixture["capability"]
        name = fixture.get("fixture_name", capability)
        if capability not in caps:
            report.add(f"{name}: skipped (capability not loaded)", True, "not advertised")
            continue
        expect_error = fixture.pop("expect_error", None)
        fixture_body = {k: v for k, v in fixture.items() if k != "fixture_name"}
        status, payload = transport.post(f"/{capability}", fixture_body)
        if expect_error:
            ok = payload.get("ok") is False and status >= 400
            detail = json.dumps(payload.get("error", {}))[:200]
            if ok and expect_error.get("field"):
                ok = expect_error["field"] in detail
            report.add(f"{name}: rejected with structured error", ok, detail)
            continue
        problems = _validate_result(capability, payload, fixture_body["request_id"])
        problems += _expected_shapes_ok(capability, fixture_body, payload)
        if capability == "encode" and not problems:
            img = tuple(fixture_body["tensors"]["image"]["shape"])
            lat = tuple(payload["result"]["tensors"]["latent"]["shape"])
            if lat[:2] != (img[0] // factor, img[1] // factor) or lat[2] != int(
                health["codec"].get("latent_channels", 4)
            ):
                problems.append(f"latent shape {lat} inconsistent with codec factor {factor}")
        report.add(f"{name}: schema conformant", not problems, "; ".join(problems))

    # Determinism probe: denoise twice with identical bytes.
    det_fixture = next(f for f in load_fixtures() if f["capability"] == "denoise" and not f.get("expect_error"))
    body = {k: v for k, v in det_fixture.items() if k not in ("fixture_name", "expect_error")}
    if "denoise" in caps:
        _, first = transport.post("/denoise", body)
        _, second = transport.post("/denoise", body)
        same = json.dumps(first.get("result", {}), sort_keys=True) == json.dumps(
            second.get("result", {}), sort_keys=True
        )
        report.add("denoise: deterministic for identical requests", same)

    # Oversized payload must be rejected.
    big = dict(body)
    big["tensors"] = dict(body["tensors"])
    big["tensors"]["q_t"] = {
        "shape": [4096, 4096, 4],
        "dtype": "float64",
        "data": "AA" * (wire.MAX_PAYLOAD_BYTES // 2 + 16),
    }
    status, payload = transport.post("/denoise", big)
    report.add(
        "oversized payload rejected with size-limit error",
        status in (400, 413) and payload.get("ok") is False,
        f"status {status}",
    )
    return report


def write_report(report: ConformanceReport, path: str | Path, extra: dict | None = None) -> None:
    data = report.to_json()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True))
