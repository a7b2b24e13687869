"""Guidance oracle protocol and deterministic synthetic implementations.

The training stack never touches pretrained models directly; everything it
needs (image generation, a denoising critic, text-prompted segmentation,
embeddings, a latent codec, landmarks) arrives through this protocol.  The
synthetic oracle family below provides seeded, closed-form stand-ins so the
whole pipeline runs and is testable without any model weights; a network
bridge can serve the same protocol over HTTP.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Protocol, runtime_checkable

import numpy as np
import torch
from torch import Tensor

from .camera import Camera
from .errors import OracleError, ParameterError

EMBED_DIM = 64


@dataclass(frozen=True)
class NoiseSchedule:
    """DDPM-style forward-noising schedule: q_t = sqrt(abar_t) q + sqrt(1 - abar_t) eps."""

    betas: np.ndarray
    alphas_cumprod: np.ndarray

    @staticmethod
    def ddpm_linear(num_timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, num_timesteps, dtype=np.float64)
        alphas_cumprod = np.cumprod(1.0 - betas)
        return NoiseSchedule(betas=betas, alphas_cumprod=alphas_cumprod)

    @property
    def num_timesteps(self) -> int:
        return len(self.betas)

    def abar(self, t: int) -> float:
        if not (0 <= t < self.num_timesteps):
            raise ParameterError(f"timestep {t} outside schedule range [0, {self.num_timesteps})")
        return float(self.alphas_cumprod[t])

    def noise_image(self, q: Tensor, eps: Tensor, t: int) -> Tensor:
        abar = self.abar(t)
        return np.sqrt(abar) * q + np.sqrt(1.0 - abar) * eps

    def to_json(self) -> dict:
        return {
            "kind": "ddpm_linear",
            "num_timesteps": self.num_timesteps,
            "beta_start": float(self.betas[0]),
            "beta_end": float(self.betas[-1]),
        }

    @staticmethod
    def from_json(data: dict) -> "NoiseSchedule":
        if data.get("kind") != "ddpm_linear":
            raise ParameterError(f"unknown noise schedule kind {data.get('kind')!r}")
        return NoiseSchedule.ddpm_linear(
            num_timesteps=int(data["num_timesteps"]),
            beta_start=float(data["beta_start"]),
            beta_end=float(data["beta_end"]),
        )


@dataclass
class SdsRequest:
    """Denoising-critic query: the clean rendering q, its noised version
    q_t at timestep t, and the noise eps that produced it."""

    q: Tensor
    prompt: str
    t: int
    eps: Tensor
    q_t: Tensor
    mode: str = "latent"  # "latent" (C=4) or "rgb" (C=3)
    camera: Camera | None = None  # procedural critics may condition on the view


@dataclass
class SdsResponse:
    eps_hat: Tensor
    u_t: float


@dataclass
class EmbedResult:
    embedding: Tensor  # (D,)
    similarity: float | None = None
    similarity_grad: Tensor | None = None  # d(cosine)/d(image pixels)


@runtime_checkable
class GuidanceOracle(Protocol):
    """Capability surface the pipeline consumes; see the module docstring."""

    def capabilities(self) -> set[str]: ...

    def schedule(self) -> NoiseSchedule: ...

    def codec_factor(self) -> int: ...

    def generate(
        self,
        prompt: str,
        size: tuple[int, int],
        depth: Tensor | None = None,
        current: Tensor | None = None,
        known_mask: Tensor | None = None,
        seed: int = 0,
        camera: Camera | None = None,
    ) -> Tensor: ...

    def denoise(self, request: SdsRequest) -> SdsResponse: ...

    def segment(self, image: Tensor, keyword: str, camera: Camera | None = None) -> Tensor: ...

    def embed_image(self, image: Tensor, text: str | None = None, with_similarity_grad: bool = False) -> EmbedResult: ...

    def embed_text(self, text: str) -> Tensor: ...

    def encode(self, image: Tensor) -> Tensor: ...

    def decode(self, latent: Tensor) -> Tensor: ...

    def landmarks(self, image: Tensor) -> dict: ...


# ---------------------------------------------------------------------------
# Critics
# ---------------------------------------------------------------------------

def perfect_critic(request: SdsRequest, schedule: NoiseSchedule) -> SdsResponse:
    """Returns the true noise: the SDS gradient vanishes identically."""
    return SdsResponse(eps_hat=request.eps.clone(), u_t=1.0)


def linear_critic(request: SdsRequest, schedule: NoiseSchedule) -> SdsResponse:
    """Toy critic eps_hat = q_t, so the gradient is u_t (q_t - eps)."""
    return SdsResponse(eps_hat=request.q_t.clone(), u_t=1.0)


def target_critic(target_fn: Callable[[SdsRequest], Tensor]):
    """Critic that knows the ground-truth image for the current view.

    eps_hat = (q_t - sqrt(abar) target) / sqrt(1 - abar) makes
    u_t (eps_hat - eps) = q - target exactly when u_t = sqrt((1-abar)/abar):
    a pure pixel-difference pull toward the target render.
    """

    def critic(request: SdsRequest, schedule: NoiseSchedule) -> SdsResponse:
        target = torch.as_tensor(target_fn(request), dtype=request.q_t.dtype)
        abar = schedule.abar(request.t)
        eps_hat = (request.q_t - np.sqrt(abar) * target) / np.sqrt(1.0 - abar)
        return SdsResponse(eps_hat=eps_hat, u_t=float(np.sqrt((1.0 - abar) / abar)))

    return critic


# ---------------------------------------------------------------------------
# Reference latent codec
# ---------------------------------------------------------------------------

# Fixed full-rank color lift: latent = LIFT @ rgb (per pixel); decode uses the
# pseudo-inverse, so the codec loses only the spatial pooling.
_LIFT = np.array(
    [
        [0.57735027, 0.57735027, 0.57735027],
        [0.70710678, -0.70710678, 0.0],
        [0.40824829, 0.40824829, -0.81649658],
        [0.5, -0.25, -0.25],
    ]
)
_LIFT_PINV = np.linalg.pinv(_LIFT)


class ReferenceCodec:
    """Block-average pooling + fixed linear channel lift; deterministic."""

    def __init__(self, factor: int = 2):
        if factor < 1:
            raise ParameterError("codec factor must be >= 1")
        self.factor = factor

    def encode(self, image: Tensor) -> Tensor:
        img = torch.as_tensor(image, dtype=torch.float64)
        h, w, c = img.shape
        if c != 3:
            raise ParameterError("encode expects an (H, W, 3) image")
        f = self.factor
        if h % f or w % f:
            raise ParameterError(f"image size {h}x{w} not divisible by codec factor {f}")
        pooled = img.reshape(h // f, f, w // f, f, 3).mean(dim=(1, 3))
        lift = torch.from_numpy(_LIFT)
        return torch.einsum("lc,hwc->hwl", lift, pooled)

    def channel_lift(self, rgb: Tensor) -> Tensor:
        """Per-pixel color lift (..., 3) -> (..., 4) without spatial pooling."""
        rgb = torch.as_tensor(rgb, dtype=torch.float64)
        return rgb @ torch.from_numpy(_LIFT).T

    def decode(self, latent: Tensor) -> Tensor:
        lat = torch.as_tensor(latent, dtype=torch.float64)
        if lat.ndim != 3 or lat.shape[2] != 4:
            raise ParameterError("decode expects an (h, w, 4) latent")
        pinv = torch.from_numpy(_LIFT_PINV)
        rgb = torch.einsum("cl,hwl->hwc", pinv, lat)
        f = self.factor
        rgb = rgb.repeat_interleave(f, dim=0).repeat_interleave(f, dim=1)
        return rgb.clamp(0.0, 1.0)


# ---------------------------------------------------------------------------
# Embedding stand-in
# ---------------------------------------------------------------------------

class ReferenceEmbedder:
    """Deterministic image/text embedder with exact similarity gradients.

    Images pool to an 8x8 grid, project through a fixed seeded matrix, and
    normalize; texts hash to a seeded unit vector.  The cosine-similarity
    gradient w.r.t. image pixels comes from autograd on this differentiable
    featurizer, matching what a real vision-language tower would return.
    """

    def __init__(self, dim: int = EMBED_DIM, seed: int = 1234, pool: int = 8):
        self.dim = dim
        self.pool = pool
        rng = np.random.default_rng(seed)
        self.projection = torch.from_numpy(rng.normal(size=(dim, pool * pool * 3)) / np.sqrt(pool * pool * 3))

    def _features(self, image: Tensor) -> Tensor:
        img = image if torch.is_tensor(image) else torch.as_tensor(image, dtype=torch.float64)
        img = img.to(torch.float64)
        h, w, c = img.shape
        p = self.pool
        ph, pw = max(h // p, 1), max(w // p, 1)
        hh, ww = ph * p, pw * p
        pooled = img[:hh, :ww].reshape(p, ph, p, pw, c).mean(dim=(1, 3))
        vec = self.projection @ pooled.reshape(-1)
        return vec / vec.norm().clamp_min(1e-30)

    def embed_image(self, image: Tensor) -> Tensor:
        return self._features(torch.as_tensor(image)).detach()

    def embed_text(self, text: str) -> Tensor:
        digest = hashlib.sha256(text.encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = torch.from_numpy(rng.normal(size=self.dim))
        return vec / vec.norm().clamp_min(1e-30)

    def similarity_with_grad(self, image: Tensor, text: str) -> tuple[Tensor, float, Tensor]:
        leaf = torch.as_tensor(image, dtype=torch.float64).detach().clone().requires_grad_(True)
        z_img = self._features(leaf)
        z_text = self.embed_text(text)
        sim = (z_img * z_text).sum()
        sim.backward()
        return z_img.detach(), float(sim.detach()), leaf.grad.detach()


# ---------------------------------------------------------------------------
# Synthetic oracle
# ---------------------------------------------------------------------------

def constant_generator(color=(0.5, 0.5, 0.5)):
    def generate(prompt, size, depth=None, current=None, known_mask=None, seed=0, camera=None):
        h, w = size
        img = torch.zeros(h, w, 3, dtype=torch.float64)
        img[:] = torch.tensor(color, dtype=torch.float64)
        return img

    return generate


class SyntheticOracle:
    """Deterministic in-process oracle assembled from pluggable parts.

    ``critic`` is a callable (SdsRequest, NoiseSchedule) -> SdsResponse;
    ``generator`` matches :meth:`generate`'s signature; ``segmenter`` is a
    callable (image, keyword, camera) -> (H, W) mask.
    """

    def __init__(
        self,
        critic: Callable[[SdsRequest, NoiseSchedule], SdsResponse] | None = None,
        generator: Callable | None = None,
        segmenter: Callable | None = None,
        noise_schedule: NoiseSchedule | None = None,
        codec: ReferenceCodec | None = None,
        embedder: ReferenceEmbedder | None = None,
        landmarker: Callable | None = None,
    ):
        self._critic = critic or perfect_critic
        self._generator = generator or constant_generator()
        self._segmenter = segmenter
        self._schedule = noise_schedule or NoiseSchedule.ddpm_linear()
        self._codec = codec or ReferenceCodec(factor=2)
        self._embedder = embedder or ReferenceEmbedder()
        self._landmarker = landmarker

    def capabilities(self) -> set[str]:
        caps = {"generate", "denoise", "embed_image", "embed_text", "encode", "decode"}
        if self._segmenter is not None:
            caps.add("segment")
        if self._landmarker is not None:
            caps.add("landmarks")
        return caps

    def schedule(self) -> NoiseSchedule:
        return self._schedule

    def codec_factor(self) -> int:
        return self._codec.factor

    def generate(self, prompt, size, depth=None, current=None, known_mask=None, seed=0, camera=None):
        return self._generator(
            prompt, size, depth=depth, current=current, known_mask=known_mask, seed=seed, camera=camera
        )

    def denoise(self, request: SdsRequest) -> SdsResponse:
        return self._critic(request, self._schedule)

    def segment(self, image, keyword, camera=None):
        if self._segmenter is None:
            raise OracleError("segment capability not configured", retryable=False)
        return self._segmenter(image, keyword, camera)

    def embed_image(self, image, text=None, with_similarity_grad=False) -> EmbedResult:
        if with_similarity_grad:
            if text is None:
                raise ParameterError("similarity gradient needs the text to compare against")
            z, sim, grad = self._embedder.similarity_with_grad(image, text)
            return EmbedResult(embedding=z, similarity=sim, similarity_grad=grad)
        z = self._embedder.embed_image(image)
        sim = None
        if text is not None:
            zt = self._embedder.embed_text(text)
            sim = float((z * zt).sum())
        return EmbedResult(embedding=z, similarity=sim)

    def embed_text(self, text: str) -> Tensor:
        return self._embedder.embed_text(text)

    def encode(self, image) -> Tensor:
        return self._codec.encode(image)

    def decode(self, latent) -> Tensor:
        return self._codec.decode(latent)

    def landmarks(self, image) -> dict:
        if self._landmarker is None:
            raise OracleError("landmarks capability not configured", retryable=False)
        return self._landmarker(image)


class FlakyOracle:
    """Test helper: fails the first ``failures`` calls of one capability."""

    def __init__(self, inner, capability: str, failures: int = 1, error: Exception | None = None):
        self._inner = inner
        self._capability = capability
        self._remaining = failures
        self._error = error or OracleError(f"synthetic failure in {capability}", retryable=True)

    def __getattr__(self, name):
        attr = getattr(self._inner, name)
        if name != self._capability:
            return attr

        def wrapped(*args, **kwargs):
            if self._remaining > 0:
                self._remaining -= 1
                raise self._error
            return attr(*args, **kwargs)

        return wrapped
