"""FastAPI application exposing one endpoint per oracle capability."""

from __future__ import annotations

import json

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import wire
from .backends.base import CapabilityNotLoaded


def create_app(backend) -> FastAPI:
    app = FastAPI(title="guidance-bridge", version="0.1.0")
    app.state.backend = backend

    @app.get("/health")
    def health():
        return {
            "schema_version": wire.SCHEMA_VERSION,
            "backend": backend.name,
            "capabilities": sorted(backend.capabilities()),
            "noise_schedule": backend.schedule_info(),
            "codec": backend.codec_info(),
        }

    def _json_error(body, code, message, status, field=None):
        return JSONResponse(
            status_code=status, content=wire.error_response(body, code, message, status, field)
        )

    @app.post("/{capability}")
    async def dispatch(capability: str, request: Request):
        raw = await request.body()
        if len(raw) > wire.MAX_PAYLOAD_BYTES:
            return _json_error(
                {}, "payload_too_large",
                f"payload {len(raw)} exceeds limit {wire.MAX_PAYLOAD_BYTES} bytes", 413,
            )
        try:
            body = json.loads(raw.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            return _json_error({}, "bad_json", str(exc), 400)

        if capability not in wire.CAPABILITIES:
            return _json_error(body, "unknown_capability", f"no such capability {capability!r}", 404)
        if capability not in backend.capabilities():
            return _json_error(
                body, "capability_not_loaded", f"{capability!r} is not loaded on this bridge", 501
            )
        try:
            params, tensors = wire.parse_request(body, capability)
        except wire.WireError as exc:
            return _json_error(body, "invalid_request", str(exc), exc.status, exc.field)

        try:
            result = _run(backend, capability, params, tensors)
        except CapabilityNotLoaded as exc:
            return _json_error(body, "capability_not_loaded", str(exc), 501)
        except (ValueError, KeyError) as exc:
            return _json_error(body, "bad_request", str(exc), 400)

        return JSONResponse(status_code=200, content=wire.response(body, **result))

    return app


def _run(backend, capability: str, params: dict, tensors: dict) -> dict:
    extras = {k: v for k, v in params.items() if k not in wire.CAPABILITIES[capability]["params"]}
    if capability == "generate":
        image = backend.generate(
            prompt=params["prompt"],
            height=int(params["height"]),
            width=int(params["width"]),
            seed=int(params.get("seed", 0)),
            depth=tensors.get("depth"),
            current=tensors.get("current"),
            known_mask=tensors.get("known_mask"),
            extras=extras,
        )
        return {"tensors": {"image": image}}
    if capability == "denoise":
        eps_hat, u_t = backend.denoise(
            q_t=tensors["q_t"], prompt=params["prompt"], t=int(params["t"]),
            mode=params["mode"], extras=extras,
        )
        return {"params": {"u_t": u_t}, "tensors": {"eps_hat": eps_hat}}
    if capability == "segment":
        mask = backend.segment(tensors["image"], params["keyword"], extras)
        return {"tensors": {"mask": np.clip(mask, 0.0, 1.0)}}
    if capability == "embed_image":
        out = backend.embed_image(
            tensors["image"], params.get("text"), bool(params.get("with_similarity_grad", False))
        )
        result: dict = {"params": {}, "tensors": {"embedding": out["embedding"]}}
        if "similarity" in out:
            result["params"]["similarity"] = out["similarity"]
        if "similarity_grad" in out:
            result["tensors"]["similarity_grad"] = out["similarity_grad"]
        return result
    if capability == "embed_text":
        return {"tensors": {"embedding": backend.embed_text(params["text"])}}
    if capability == "encode":
        return {"tensors": {"latent": backend.encode(tensors["image"])}}
    if capability == "decode":
        return {"tensors": {"image": backend.decode(tensors["latent"])}}
    if capability == "landmarks":
        points, confidence = backend.landmarks(tensors["image"])
        return {"tensors": {"points": points, "confidence": confidence}}
    raise KeyError(capability)
