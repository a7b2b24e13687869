"""Deterministic numpy reference backend.

Serves every capability with cheap closed-form stand-ins: useful for
conformance testing, local pipeline runs, and as the template for wiring a
real model backend.  All outputs are pure functions of the request (seeds
included), so repeated calls return identical bytes.
"""

from __future__ import annotations

import hashlib

import numpy as np


EMBED_DIM = 64

# Full-rank 4x3 channel lift for the latent codec; decode uses the
# pseudo-inverse so only the spatial pooling is lossy.
_LIFT = np.array(
    [
        [0.57735027, 0.57735027, 0.57735027],
        [0.70710678, -0.70710678, 0.0],
        [0.40824829, 0.40824829, -0.81649658],
        [0.5, -0.25, -0.25],
    ]
)
_LIFT_PINV = np.linalg.pinv(_LIFT)


def _seed_from(*parts) -> int:
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


class ReferenceBackend:
    name = "reference"

    def __init__(self, num_timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                 codec_factor: int = 2):
        self.num_timesteps = num_timesteps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.codec_factor = codec_factor
        betas = np.linspace(beta_start, beta_end, num_timesteps)
        self.alphas_cumprod = np.cumprod(1.0 - betas)

    # -- metadata -----------------------------------------------------------

    def capabilities(self) -> set[str]:
        return {
            "generate", "denoise", "segment", "embed_image", "embed_text",
            "encode", "decode", "landmarks",
        }

    def schedule_info(self) -> dict:
        return {
            "kind": "ddpm_linear",
            "num_timesteps": self.num_timesteps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }

    def codec_info(self) -> dict:
        return {"spatial_factor": self.codec_factor, "latent_channels": 4}

    # -- capabilities ---------------------------------------------------------

    def generate(self, prompt, height, width, seed, depth, current, known_mask, extras):
        rng = np.random.default_rng(_seed_from("generate", prompt, seed))
        base = rng.uniform(0.2, 0.8, size=3)
        ys = np.linspace(0, 1, height)[:, None, None]
        img = np.clip(base[None, None, :] * (0.7 + 0.3 * ys), 0.0, 1.0)
        img = np.broadcast_to(img, (height, width, 3)).copy()
        if depth is not None:
            img = np.clip(img + 0.25 * depth[:, :, None], 0.0, 1.0)
        if current is not None and known_mask is not None:
            keep = np.clip(known_mask, 0.0, 1.0)[:, :, None]
            img = keep * current + (1.0 - keep) * img
        return img

    def denoise(self, q_t, prompt, t, mode, extras):
        if not (0 <= t < self.num_timesteps):
            raise ValueError(f"timestep {t} outside [0, {self.num_timesteps})")
        abar = float(self.alphas_cumprod[t])
        # Critic that treats a prompt-keyed flat image as the clean estimate.
        rng = np.random.default_rng(_seed_from("denoise", prompt, mode))
        flat = rng.uniform(0.3, 0.7, size=(1, 1, q_t.shape[2]))
        eps_hat = (q_t - np.sqrt(abar) * flat) / np.sqrt(max(1.0 - abar, 1e-12))
        return eps_hat.astype(np.float64), float(1.0 - abar)

    def segment(self, image, keyword, extras):
        h, w = image.shape[:2]
        rng = np.random.default_rng(_seed_from("segment", keyword))
        cy, cx = rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7)
        ys = np.linspace(0, 1, h)[:, None]
        xs = np.linspace(0, 1, w)[None, :]
        d2 = (ys - cy) ** 2 + (xs - cx) ** 2
        mask = np.exp(-d2 / (2 * 0.08))
        return np.clip(mask, 0.0, 1.0)

    def embed_image(self, image, text, with_similarity_grad):
        h, w = image.shape[:2]
        p = 8
        ph, pw = max(h // p, 1), max(w // p, 1)
        pooled = image[: ph * p, : pw * p].reshape(p, ph, p, pw, 3).mean(axis=(1, 3))
        proj = self._projection(pooled.size)
        raw = proj @ pooled.reshape(-1)
        norm = np.linalg.norm(raw)
        z = raw / max(norm, 1e-30)
        out = {"embedding": z}
        if text is not None:
            zt = self.embed_text(text)
            out["similarity"] = float(z @ zt)
        if with_similarity_grad:
            if text is None:
                raise ValueError("similarity gradient needs text")
            zt = self.embed_text(text)
            # d/d pooled of cos(z(pooled), zt), z = raw/|raw|.
            g_raw = (zt - z * float(z @ zt)) / max(norm, 1e-30)
            g_pooled = (proj.T @ g_raw).reshape(p, p, 3)
            grad = np.zeros_like(image, dtype=np.float64)
            block = np.repeat(np.repeat(g_pooled, ph, axis=0), pw, axis=1) / (ph * pw)
            grad[: ph * p, : pw * p] = block
            out["similarity_grad"] = grad
        return out

    def embed_text(self, text):
        rng = np.random.default_rng(_seed_from("text", text))
        z = rng.normal(size=EMBED_DIM)
        return z / np.linalg.norm(z)

    def _projection(self, in_dim: int) -> np.ndarray:
        rng = np.random.default_rng(_seed_from("projection", in_dim))
        return rng.normal(size=(EMBED_DIM, in_dim)) / np.sqrt(in_dim)

    def encode(self, image):
        h, w = image.shape[:2]
        f = self.codec_factor
        if h % f or w % f:
            raise ValueError(f"image size {h}x{w} not divisible by codec factor {f}")
        pooled = image.reshape(h // f, f, w // f, f, 3).mean(axis=(1, 3))
        return np.einsum("lc,hwc->hwl", _LIFT, pooled)

    def decode(self, latent):
        rgb = np.einsum("cl,hwl->hwc", _LIFT_PINV, latent)
        f = self.codec_factor
        rgb = np.repeat(np.repeat(rgb, f, axis=0), f, axis=1)
        return np.clip(rgb, 0.0, 1.0)

    def landmarks(self, image):
        h, w = image.shape[:2]
        rng = np.random.default_rng(_seed_from("landmarks", h, w))
        angles = np.linspace(0, 2 * np.pi, 68, endpoint=False)
        pts = np.stack(
            [0.3 * np.cos(angles), 0.3 * np.sin(angles), 0.2 + 0.02 * rng.normal(size=68)], axis=1
        )
        conf = np.clip(0.8 + 0.2 * rng.uniform(size=68), 0.0, 1.0)
        return pts, conf
