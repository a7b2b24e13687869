"""Pretrained-model backend: diffusion generation/critic, text-prompted
segmentation, vision-language embeddings, and the VAE latent codec.

Model identifiers or local paths come from environment variables (see
``from_env``).  Imports are guarded so the bridge package works without the
heavyweight stack installed; instantiation fails with a clear message when
weights are unavailable.  Inference runs under per-model locks, one request
at a time per model.
"""

from __future__ import annotations

import os
import threading

import numpy as np

from .base import CapabilityNotLoaded

EMBED_DIM = 512


class PretrainedBackend:
    name = "pretrained"

    def __init__(
        self,
        generation_model: str | None = None,
        depth_model: str | None = None,
        inpaint_model: str | None = None,
        segmentation_model: str | None = None,
        embedding_model: str | None = None,
        device: str = "cpu",
        guidance_scale: float = 7.5,
        num_inference_steps: int = 30,
    ):
        try:
            import torch  # noqa: F401
            from diffusers import (  # noqa: F401
                AutoencoderKL,
                StableDiffusionDepth2ImgPipeline,
                StableDiffusionInpaintPipeline,
                StableDiffusionPipeline,
            )
            from transformers import (  # noqa: F401
                CLIPSegForImageSegmentation,
                CLIPSegProcessor,
            )
        except ImportError as exc:
            raise CapabilityNotLoaded(
                f"pretrained backend needs torch+diffusers+transformers installed: {exc}"
            ) from exc

        import torch
        from diffusers import (
            StableDiffusionDepth2ImgPipeline,
            StableDiffusionInpaintPipeline,
            StableDiffusionPipeline,
        )

        self.device = device
        self.guidance_scale = guidance_scale
        self.num_inference_steps = num_inference_steps
        self._locks: dict[str, threading.Lock] = {}
        self._torch = torch

        if generation_model is None:
            raise CapabilityNotLoaded(
                "no generation model configured (set BRIDGE_GENERATION_MODEL to a local path)"
            )
        self.pipe = StableDiffusionPipeline.from_pretrained(generation_model).to(device)
        self.depth_pipe = (
            StableDiffusionDepth2ImgPipeline.from_pretrained(depth_model).to(device)
            if depth_model
            else None
        )
        self.inpaint_pipe = (
            StableDiffusionInpaintPipeline.from_pretrained(inpaint_model).to(device)
            if inpaint_model
            else None
        )
        self.vae = self.pipe.vae
        self.unet = self.pipe.unet
        self.scheduler = self.pipe.scheduler

        self.segmenter = None
        if segmentation_model:
            from transformers import CLIPSegForImageSegmentation, CLIPSegProcessor

            self.seg_processor = CLIPSegProcessor.from_pretrained(segmentation_model)
            self.segmenter = CLIPSegForImageSegmentation.from_pretrained(segmentation_model).to(device)

        self.embedder = None
        if embedding_model:
            from transformers import AutoModel, AutoProcessor

            self.embed_processor = AutoProcessor.from_pretrained(embedding_model)
            self.embedder = AutoModel.from_pretrained(embedding_model).to(device)

    @staticmethod
    def from_env() -> "PretrainedBackend":
        return PretrainedBackend(
            generation_model=os.environ.get("BRIDGE_GENERATION_MODEL"),
            depth_model=os.environ.get("BRIDGE_DEPTH_MODEL"),
            inpaint_model=os.environ.get("BRIDGE_INPAINT_MODEL"),
            segmentation_model=os.environ.get("BRIDGE_SEGMENTATION_MODEL"),
            embedding_model=os.environ.get("BRIDGE_EMBEDDING_MODEL"),
            device=os.environ.get("BRIDGE_DEVICE", "cpu"),
            guidance_scale=float(os.environ.get("BRIDGE_GUIDANCE_SCALE", "7.5")),
            num_inference_steps=int(os.environ.get("BRIDGE_STEPS", "30")),
        )

    def _lock(self, model: str) -> threading.Lock:
        return self._locks.setdefault(model, threading.Lock())

    # -- metadata -----------------------------------------------------------

    def capabilities(self) -> set[str]:
        caps = {"generate", "denoise", "encode", "decode"}
        if self.segmenter is not None:
            caps.add("segment")
        if self.embedder is not None:
            caps |= {"embed_image", "embed_text"}
        return caps

    def schedule_info(self) -> dict:
        cfg = self.scheduler.config
        return {
            "kind": "ddpm_linear",
            "num_timesteps": int(cfg.num_train_timesteps),
            "beta_start": float(cfg.beta_start),
            "beta_end": float(cfg.beta_end),
        }

    def codec_info(self) -> dict:
        factor = 2 ** (len(self.vae.config.block_out_channels) - 1)
        return {"spatial_factor": factor, "latent_channels": int(self.vae.config.latent_channels)}

    # -- capabilities ---------------------------------------------------------

    def generate(self, prompt, height, width, seed, depth, current, known_mask, extras):
        torch = self._torch
        from PIL import Image

        generator = torch.Generator(self.device).manual_seed(int(seed))
        with self._lock("generate"), torch.no_grad():
            if depth is not None and self.depth_pipe is not None and current is not None:
                init = Image.fromarray((np.clip(current, 0, 1) * 255).astype(np.uint8))
                depth_t = torch.from_numpy(np.asarray(depth, dtype=np.float32))[None]
                out = self.depth_pipe(
                    prompt=prompt, image=init, depth_map=depth_t, generator=generator,
                    guidance_scale=self.guidance_scale, num_inference_steps=self.num_inference_steps,
                ).images[0]
            elif known_mask is not None and self.inpaint_pipe is not None and current is not None:
                init = Image.fromarray((np.clip(current, 0, 1) * 255).astype(np.uint8))
                hole = Image.fromarray((np.clip(1.0 - known_mask, 0, 1) * 255).astype(np.uint8))
                out = self.inpaint_pipe(
                    prompt=prompt, image=init, mask_image=hole, generator=generator,
                    guidance_scale=self.guidance_scale, num_inference_steps=self.num_inference_steps,
                ).images[0]
            else:
                out = self.pipe(
                    prompt=prompt, height=height, width=width, generator=generator,
                    guidance_scale=self.guidance_scale, num_inference_steps=self.num_inference_steps,
                ).images[0]
        arr = np.asarray(out.resize((width, height)), dtype=np.float64) / 255.0
        return arr[:, :, :3]

    def denoise(self, q_t, prompt, t, mode, extras):
        torch = self._torch
        if mode != "latent":
            raise ValueError("pretrained critic operates on latents; send mode='latent'")
        with self._lock("unet"), torch.no_grad():
            latents = torch.from_numpy(np.asarray(q_t, dtype=np.float32)).permute(2, 0, 1)[None]
            latents = latents.to(self.device)
            text = self.pipe._encode_prompt(  # classifier-free pair
                prompt, self.device, 1, True, ""
            )
            timestep = torch.tensor([int(t)], device=self.device)
            noise_uncond, noise_text = self.unet(
                torch.cat([latents, latents]), torch.cat([timestep, timestep]),
                encoder_hidden_states=text,
            ).sample.chunk(2)
            scale = float(extras.get("guidance_scale", self.guidance_scale))
            eps = noise_uncond + scale * (noise_text - noise_uncond)
        abar = float(self.scheduler.alphas_cumprod[int(t)])
        out = eps[0].permute(1, 2, 0).cpu().numpy().astype(np.float64)
        return out, float(1.0 - abar)

    def segment(self, image, keyword, extras):
        torch = self._torch
        if self.segmenter is None:
            raise CapabilityNotLoaded("segmentation model not loaded")
        from PIL import Image

        pil = Image.fromarray((np.clip(image, 0, 1) * 255).astype(np.uint8))
        with self._lock("segment"), torch.no_grad():
            inputs = self.seg_processor(
                text=[keyword], images=[pil], padding=True, return_tensors="pt"
            ).to(self.device)
            logits = self.segmenter(**inputs).logits
            mask = torch.sigmoid(logits)[0].cpu().numpy()
        h, w = image.shape[:2]
        ys = (np.linspace(0, mask.shape[0] - 1, h)).astype(int)
        xs = (np.linspace(0, mask.shape[1] - 1, w)).astype(int)
        return mask[np.ix_(ys, xs)].astype(np.float64)

    def embed_image(self, image, text, with_similarity_grad):
        torch = self._torch
        if self.embedder is None:
            raise CapabilityNotLoaded("embedding model not loaded")
        from PIL import Image

        pil = Image.fromarray((np.clip(image, 0, 1) * 255).astype(np.uint8))
        inputs = self.embed_processor(images=[pil], return_tensors="pt").to(self.device)
        pixel_values = inputs["pixel_values"].requires_grad_(with_similarity_grad)
        with self._lock("embed"):
            feats = self.embedder.get_image_features(pixel_values=pixel_values)
            z = feats[0] / feats[0].norm()
            out = {"embedding": z.detach().cpu().numpy().astype(np.float64)}
            if text is not None:
                zt = torch.from_numpy(self.embed_text(text)).to(z.dtype)
                sim = (z * zt.to(z.device)).sum()
                out["similarity"] = float(sim.detach())
                if with_similarity_grad:
                    sim.backward()
                    grad = pixel_values.grad[0].permute(1, 2, 0).cpu().numpy()
                    h, w = image.shape[:2]
                    ys = (np.linspace(0, grad.shape[0] - 1, h)).astype(int)
                    xs = (np.linspace(0, grad.shape[1] - 1, w)).astype(int)
                    out["similarity_grad"] = grad[np.ix_(ys, xs)].astype(np.float64)
        return out

    def embed_text(self, text):
        torch = self._torch
        if self.embedder is None:
            raise CapabilityNotLoaded("embedding model not loaded")
        with self._lock("embed"), torch.no_grad():
            inputs = self.embed_processor(text=[text], padding=True, return_tensors="pt").to(self.device)
            feats = self.embedder.get_text_features(**inputs)
            z = feats[0] / feats[0].norm()
        return z.cpu().numpy().astype(np.float64)

    def encode(self, image):
        torch = self._torch
        with self._lock("vae"), torch.no_grad():
            x = torch.from_numpy(np.asarray(image, dtype=np.float32)).permute(2, 0, 1)[None]
            x = (x * 2.0 - 1.0).to(self.device)
            latent = self.vae.encode(x).latent_dist.mode() * self.vae.config.scaling_factor
        return latent[0].permute(1, 2, 0).cpu().numpy().astype(np.float64)

    def decode(self, latent):
        torch = self._torch
        with self._lock("vae"), torch.no_grad():
            z = torch.from_numpy(np.asarray(latent, dtype=np.float32)).permute(2, 0, 1)[None]
            z = (z / self.vae.config.scaling_factor).to(self.device)
            image = self.vae.decode(z).sample
            image = ((image + 1.0) / 2.0).clamp(0, 1)
        return image[0].permute(1, 2, 0).cpu().numpy().astype(np.float64)

    def landmarks(self, image):
        raise CapabilityNotLoaded("no landmark model wired into the pretrained backend")
