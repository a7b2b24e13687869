"""HTTP client implementing the GuidanceOracle protocol against a bridge."""

from __future__ import annotations

import json
import urllib.error
import urllib.request

import numpy as np
import torch

from . import wire
from .errors import OracleError
from .oracle import EmbedResult, NoiseSchedule, SdsRequest, SdsResponse


class HttpOracle:
    """Talks the wire protocol to a guidance bridge endpoint.

    Schedule, capabilities, and codec metadata come from /health at
    construction; mismatched protocol versions are rejected up front.
    """

    def __init__(self, endpoint: str, timeout: float = 60.0, retries: int = 1):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        health = self._get("/health")
        problems = wire.validate_health(health)
        if problems:
            raise OracleError(f"bridge health check failed: {'; '.join(problems)}")
        self._capabilities = set(health["capabilities"])
        self._schedule = NoiseSchedule.from_json(health["noise_schedule"])
        self._codec_factor = int(health["codec"]["spatial_factor"])

    # -- protocol surface ---------------------------------------------------

    def capabilities(self) -> set[str]:
        return set(self._capabilities)

    def schedule(self) -> NoiseSchedule:
        return self._schedule

    def codec_factor(self) -> int:
        return self._codec_factor

    def generate(self, prompt, size, depth=None, current=None, known_mask=None, seed=0, camera=None):
        params = {"prompt": prompt, "seed": int(seed), "height": int(size[0]), "width": int(size[1])}
        if camera is not None:
            params["camera"] = camera.to_json()
        tensors = {}
        for name, val in (("depth", depth), ("current", current), ("known_mask", known_mask)):
            if val is not None:
                tensors[name] = _np(val)
        result = self._call("generate", params, tensors)
        return torch.from_numpy(result["tensors"]["image"].astype(np.float64))

    def denoise(self, request: SdsRequest) -> SdsResponse:
        params = {"prompt": request.prompt, "t": int(request.t), "mode": request.mode}
        if request.camera is not None:
            params["camera"] = request.camera.to_json()
        tensors = {"q_t": _np(request.q_t)}
        if request.q is not None:
            tensors["q"] = _np(request.q)
        if request.eps is not None:
            tensors["eps"] = _np(request.eps)
        result = self._call("denoise", params, tensors)
        return SdsResponse(
            eps_hat=torch.from_numpy(result["tensors"]["eps_hat"].astype(np.float64)),
            u_t=float(result["params"]["u_t"]),
        )

    def segment(self, image, keyword, camera=None):
        params = {"keyword": keyword}
        if camera is not None:
            params["camera"] = camera.to_json()
        result = self._call("segment", params, {"image": _np(image)})
        return torch.from_numpy(result["tensors"]["mask"].astype(np.float64))

    def embed_image(self, image, text=None, with_similarity_grad=False) -> EmbedResult:
        params = {}
        if text is not None:
            params["text"] = text
        if with_similarity_grad:
            params["with_similarity_grad"] = True
        result = self._call("embed_image", params, {"image": _np(image)})
        grad = result["tensors"].get("similarity_grad")
        return EmbedResult(
            embedding=torch.from_numpy(result["tensors"]["embedding"].astype(np.float64)),
            similarity=result["params"].get("similarity"),
            similarity_grad=None if grad is None else torch.from_numpy(grad.astype(np.float64)),
        )

    def embed_text(self, text):
        result = self._call("embed_text", {"text": text}, {})
        return torch.from_numpy(result["tensors"]["embedding"].astype(np.float64))

    def encode(self, image):
        result = self._call("encode", {}, {"image": _np(image)})
        return torch.from_numpy(result["tensors"]["latent"].astype(np.float64))

    def decode(self, latent):
        result = self._call("decode", {}, {"latent": _np(latent)})
        return torch.from_numpy(result["tensors"]["image"].astype(np.float64))

    def landmarks(self, image) -> dict:
        result = self._call("landmarks", {}, {"image": _np(image)})
        return {
            "points": result["tensors"]["points"],
            "confidence": result["tensors"].get("confidence"),
        }

    # -- transport ----------------------------------------------------------

    def _get(self, path: str) -> dict:
        try:
            with urllib.request.urlopen(self.endpoint + path, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as exc:
            raise OracleError(f"GET {path} failed: {exc}", retryable=True) from exc

    def _call(self, capability: str, params: dict, tensors: dict) -> dict:
        request = wire.build_request(capability, params, tensors)
        body = json.dumps(request).encode("utf-8")
        if len(body) > wire.MAX_PAYLOAD_BYTES:
            raise OracleError(f"request payload {len(body)} exceeds limit {wire.MAX_PAYLOAD_BYTES}")
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                req = urllib.request.Request(
                    f"{self.endpoint}/{capability}", data=body, headers={"Content-Type": "application/json"}
                )
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                break
            except urllib.error.HTTPError as exc:
                try:
                    payload = json.loads(exc.read().decode("utf-8"))
                except Exception:
                    raise OracleError(f"{capability}: HTTP {exc.code}", retryable=exc.code >= 500) from exc
                break
            except (urllib.error.URLError, TimeoutError) as exc:
                last = exc
        else:
            raise OracleError(f"{capability}: transport failed after retries: {last}", retryable=True)

        problems = wire.validate_response(capability, payload, request["request_id"])
        if payload.get("ok") is False:
            err = payload.get("error", {})
            raise OracleError(
                f"{capability}: {err.get('code')}: {err.get('message')}",
                retryable=int(err.get("status", 400)) >= 500,
            )
        if problems:
            raise OracleError(f"{capability}: malformed response: {'; '.join(problems)}")
        result = payload["result"]
        return {
            "params": result.get("params", {}),
            "tensors": {k: wire.decode_tensor(v, field=k) for k, v in result.get("tensors", {}).items()},
        }


def _np(value) -> np.ndarray:
    if torch.is_tensor(value):
        return value.detach().cpu().numpy()
    return np.asarray(value)
