"""Serve any in-process GuidanceOracle over the wire protocol (stdlib HTTP).

Used to exercise the HTTP client against synthetic oracles and to let the
external conformance suite validate the synthetic oracle the same way it
validates a real bridge.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import torch

from . import wire
from .camera import Camera
from .errors import AvatarKitError, OracleError, ParameterError
from .oracle import GuidanceOracle, SdsRequest


def _dispatch(oracle: GuidanceOracle, request: dict) -> dict:
    problems = wire.validate_request(request)
    if problems:
        return wire.build_error(request, "invalid_request", "; ".join(problems), status=400)
    cap = request["capability"]
    if cap not in oracle.capabilities():
        return wire.build_error(request, "unsupported_capability", f"{cap} not loaded", status=501)
    params = request.get("params", {})
    tensors = {k: wire.decode_tensor(v, field=k) for k, v in request.get("tensors", {}).items()}
    camera = Camera.from_json(params["camera"]) if isinstance(params.get("camera"), dict) else None

    try:
        if cap == "generate":
            img = oracle.generate(
                prompt=params["prompt"],
                size=(int(params["height"]), int(params["width"])),
                depth=_opt_tensor(tensors, "depth"),
                current=_opt_tensor(tensors, "current"),
                known_mask=_opt_tensor(tensors, "known_mask"),
                seed=int(params.get("seed", 0)),
                camera=camera,
            )
            return wire.build_response(request, tensors={"image": _np(img)})
        if cap == "denoise":
            req = SdsRequest(
                q=_opt_tensor(tensors, "q", as_torch=True),
                prompt=params["prompt"],
                t=int(params["t"]),
                eps=_opt_tensor(tensors, "eps", as_torch=True),
                q_t=torch.as_tensor(tensors["q_t"], dtype=torch.float64),
                mode=params.get("mode", "latent"),
                camera=camera,
            )
            resp = oracle.denoise(req)
            return wire.build_response(
                request, params={"u_t": float(resp.u_t)}, tensors={"eps_hat": _np(resp.eps_hat)}
            )
        if cap == "segment":
            mask = oracle.segment(torch.as_tensor(tensors["image"]), params["keyword"], camera)
            return wire.build_response(request, tensors={"mask": _np(mask)})
        if cap == "embed_image":
            result = oracle.embed_image(
                torch.as_tensor(tensors["image"]),
                text=params.get("text"),
                with_similarity_grad=bool(params.get("with_similarity_grad", False)),
            )
            out_params = {}
            out_tensors = {"embedding": _np(result.embedding)}
            if result.similarity is not None:
                out_params["similarity"] = float(result.similarity)
            if result.similarity_grad is not None:
                out_tensors["similarity_grad"] = _np(result.similarity_grad)
            return wire.build_response(request, params=out_params, tensors=out_tensors)
        if cap == "embed_text":
            return wire.build_response(request, tensors={"embedding": _np(oracle.embed_text(params["text"]))})
        if cap == "encode":
            return wire.build_response(request, tensors={"latent": _np(oracle.encode(torch.as_tensor(tensors["image"])))})
        if cap == "decode":
            return wire.build_response(request, tensors={"image": _np(oracle.decode(torch.as_tensor(tensors["latent"])))})
        if cap == "landmarks":
            lm = oracle.landmarks(torch.as_tensor(tensors["image"]))
            return wire.build_response(
                request,
                tensors={
                    "points": np.asarray(lm["points"], dtype=np.float64),
                    "confidence": np.asarray(lm.get("confidence", np.ones(len(lm["points"]))), dtype=np.float64),
                },
            )
    except (ParameterError, OracleError) as exc:
        return wire.build_error(request, "oracle_error", str(exc), status=400)
    return wire.build_error(request, "unsupported_capability", cap, status=501)


def _opt_tensor(tensors: dict, name: str, as_torch: bool = False):
    if name not in tensors:
        return None
    return torch.as_tensor(tensors[name], dtype=torch.float64) if as_torch else tensors[name]


def _np(value) -> np.ndarray:
    if torch.is_tensor(value):
        return value.detach().cpu().numpy()
    return np.asarray(value)


def health_payload(oracle: GuidanceOracle) -> dict:
    return {
        "schema_version": wire.SCHEMA_VERSION,
        "capabilities": sorted(oracle.capabilities()),
        "noise_schedule": oracle.schedule().to_json(),
        "codec": {"spatial_factor": oracle.codec_factor(), "latent_channels": 4},
    }


class OracleHTTPServer:
    """Threaded HTTP server exposing one oracle; context-manager friendly."""

    def __init__(self, oracle: GuidanceOracle, host: str = "127.0.0.1", port: int = 0):
        self.oracle = oracle
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep tests quiet
                pass

            def _send(self, status: int, payload: dict):
                body = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path.rstrip("/") == "/health" or self.path == "/":
                    self._send(200, health_payload(outer.oracle))
                else:
                    self._send(404, {"ok": False, "error": {"code": "not_found", "message": self.path}})

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                if length > wire.MAX_PAYLOAD_BYTES:
                    # Drain the body so the client can read the 413 cleanly.
                    remaining = length
                    while remaining > 0:
                        chunk = self.rfile.read(min(remaining, 1 << 20))
                        if not chunk:
                            break
                        remaining -= len(chunk)
                    self._send(
                        413,
                        {
                            "ok": False,
                            "error": {
                                "code": "payload_too_large",
                                "message": f"payload {length} exceeds limit {wire.MAX_PAYLOAD_BYTES}",
                            },
                        },
                    )
                    return
                raw = self.rfile.read(length)
                try:
                    request = json.loads(raw.decode("utf-8"))
                except json.JSONDecodeError as exc:
                    self._send(400, {"ok": False, "error": {"code": "bad_json", "message": str(exc)}})
                    return
                capability = self.path.strip("/")
                request.setdefault("capability", capability)
                if capability and request["capability"] != capability:
                    self._send(
                        400,
                        wire.build_error(request, "capability_mismatch", "path and body disagree"),
                    )
                    return
                try:
                    response = _dispatch(outer.oracle, request)
                except AvatarKitError as exc:
                    response = wire.build_error(request, "oracle_error", str(exc), status=500)
                status = 200 if response.get("ok") else response.get("error", {}).get("status", 400)
                self._send(status, response)

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
