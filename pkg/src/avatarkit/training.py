"""Two-stage component optimization: latent-space guidance training, then
RGB refinement with an embedding-similarity term.

Each iteration renders the hybrid mesh+field image from a sampled orbit
camera, queries the guidance oracle for the SDS gradient and (periodically)
a part segmentation, and steps Adam on the combined objective.  The camera
is held fixed between segmentation refreshes so the mask stays aligned with
the view it was computed on.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import torch

from .camera import Camera
from .canonical import CanonicalFrame, CanonicalMap
from .component import RadianceComponent, save_component
from .compose import AvatarRig
from .errors import ConfigurationError, NumericError, OracleError, StageError
from .field import FieldConfig, RadianceField, fit_rgb_adapter
from .image import FeatureImage
from .losses import LossWeights, mask_loss, sds_gradient, sparsity_loss
from .oracle import GuidanceOracle
from .raycast import build_bvh
from .seeds import derive_seed, np_rng, torch_generator
from .texture import raster_geometry, rasterize
from .volume import REFINE_SAMPLES, TRAIN_SAMPLES, render_image


@dataclass(frozen=True)
class CameraDistribution:
    """Random orbit cameras for training views."""

    elevation_range: tuple[float, float] = (-10.0, 30.0)
    distance: float = 2.2
    distance_jitter: float = 0.1  # +/- fraction of distance
    fov_deg: float = 45.0

    def sample(self, rng, size: int) -> Camera:
        az = float(rng.uniform(0.0, 360.0))
        el = float(rng.uniform(*self.elevation_range))
        dist = float(self.distance * (1.0 + self.distance_jitter * rng.uniform(-1.0, 1.0)))
        return Camera(
            azimuth_deg=az, elevation_deg=el, distance=dist, fov_deg=self.fov_deg, width=size, height=size
        )


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    learning_rate: float = 1e-3
    latent_size: int = 64
    n_samples: int = TRAIN_SAMPLES
    seg_cadence: int = 10  # camera + segmentation refresh period (iterations)
    t_anneal_fraction: float = 0.2  # anneal the upper timestep bound over the final fraction
    weights: LossWeights = LossWeights()
    field: FieldConfig = FieldConfig()
    frame: CanonicalFrame = CanonicalFrame()
    camera: CameraDistribution = CameraDistribution()
    seed: int = 0
    retries: int = 2
    log_path: str | None = None
    checkpoint_dir: str | None = None
    checkpoint_every: int = 500
    # Optional early stop: called every `probe_every` iterations with
    # (iteration, component); return True to stop.
    stop_fn: Callable[[int, RadianceComponent], bool] | None = None
    probe_every: int = 50


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 500
    learning_rate: float = 1e-3
    rgb_size: int = 480
    n_samples: int = REFINE_SAMPLES
    seg_cadence: int = 10
    t_anneal_fraction: float = 0.2
    weights: LossWeights = LossWeights()
    camera: CameraDistribution = CameraDistribution()
    seed: int = 0
    retries: int = 2
    log_path: str | None = None
    train_adapter: bool = True
    calibration_pairs: tuple | None = None  # ((latent, rgb), ...) for adapter init


class _OracleSession:
    """Retry wrapper; persistent failures save a checkpoint then raise."""

    def __init__(self, oracle: GuidanceOracle, retries: int, on_abort: Callable[[], str | None], stage: str):
        self.oracle = oracle
        self.retries = retries
        self.on_abort = on_abort
        self.stage = stage

    def call(self, fn: Callable, *args, **kwargs):
        attempts = self.retries + 1
        last: Exception | None = None
        for _ in range(attempts):
            try:
                return fn(*args, **kwargs)
            except OracleError as exc:
                last = exc
                if not exc.retryable:
                    break
        saved = self.on_abort()
        note = f"; checkpoint saved to {saved}" if saved else ""
        raise StageError(f"oracle failed after {attempts} attempts: {last}{note}", stage=self.stage) from last


def _resize_mask(mask: torch.Tensor, shape: tuple[int, int]) -> torch.Tensor:
    """Bilinear-resample a segmentation mask to the render resolution."""
    if tuple(mask.shape) == shape:
        return mask
    resized = torch.nn.functional.interpolate(
        mask[None, None, :, :], size=shape, mode="bilinear", align_corners=False, antialias=False
    )
    return resized[0, 0]


def _t_range(schedule_len: int, iteration: int, total: int, anneal_fraction: float) -> tuple[int, int]:
    """Uniform timestep window with the upper bound annealed near the end."""
    hi = schedule_len - 1
    if anneal_fraction > 0 and total > 0:
        start = int(total * (1.0 - anneal_fraction))
        if iteration >= start and total > start:
            progress = (iteration - start) / max(total - start, 1)
            hi = max(1, int(round((schedule_len - 1) * (1.0 - 0.9 * progress))))
    return 0, hi


def _log_line(log_file, record: dict) -> None:
    if log_file is not None:
        log_file.write(json.dumps(record) + "\n")
        log_file.flush()


def train_component(
    avatar: AvatarRig,
    prompt: str,
    part_keyword: str,
    oracle: GuidanceOracle,
    config: TrainConfig = TrainConfig(),
) -> RadianceComponent:
    """Learn a latent-space component over the avatar with oracle guidance.

    The loop renders a 4-channel hybrid image (surface features come from
    encoding the rasterized texture), queries the critic for the SDS pixel
    gradient, and adds the weighted mask and sparsity penalties computed on
    the rendered component mask.
    """
    rf = RadianceField(replace(config.field, channels=4))
    component = RadianceComponent(
        component_id=part_keyword or "component",
        field=rf,
        frame=config.frame,
        prompt=prompt,
        part_keyword=part_keyword,
        seed=config.seed,
    )
    cmap = CanonicalMap(avatar.model, avatar.params, config.frame)
    mesh = cmap.posed
    bvh = build_bvh(mesh)
    opt = torch.optim.Adam(rf.parameters(), lr=config.learning_rate)

    def save_checkpoint() -> str | None:
        if config.checkpoint_dir is None:
            return None
        path = Path(config.checkpoint_dir)
        path.mkdir(parents=True, exist_ok=True)
        out = path / f"{component.component_id}.rfc"
        save_component(component, out)
        return str(out)

    session = _OracleSession(oracle, config.retries, save_checkpoint, stage="learn")
    raster_size = config.latent_size * oracle.codec_factor()
    log_file = open(config.log_path, "a") if config.log_path else None

    camera = None
    surface = None
    omega = None
    try:
        for it in range(config.iterations):
            if camera is None or (config.seg_cadence > 0 and it % config.seg_cadence == 0):
                camera = config.camera.sample(np_rng(config.seed, "camera", it), config.latent_size)
                geom = raster_geometry(mesh, camera.resized(raster_size, raster_size), bvh)
                rgb = rasterize(avatar.texture, camera.resized(raster_size, raster_size), mesh, geom=geom)
                latents = session.call(oracle.encode, rgb.data.detach())
                surface = FeatureImage(
                    data=latents, alpha=torch.ones(config.latent_size, config.latent_size, dtype=torch.float64)
                )
                omega = None

            result = render_image(
                rf,
                camera,
                mesh=mesh,
                surface=surface,
                n_samples=config.n_samples,
                seed=derive_seed(config.seed, "render", it),
                canonical_map=cmap,
                bvh=bvh,
            )
            render = result.image

            if omega is None:
                decoded = session.call(oracle.decode, render.data.detach())
                raw = session.call(oracle.segment, decoded, part_keyword, camera)
                omega = _resize_mask(
                    torch.as_tensor(raw, dtype=torch.float64),
                    (config.latent_size, config.latent_size),
                )

            gen = torch_generator(config.seed, "sds", it)
            t_lo, t_hi = _t_range(
                oracle.schedule().num_timesteps, it, config.iterations, config.t_anneal_fraction
            )
            sds = session.call(
                sds_gradient, render.data, prompt, oracle, gen,
                mode="latent", t_range=(t_lo, t_hi), camera=camera,
            )
            l_mask = mask_loss(omega, render.alpha)
            l_sparse = sparsity_loss(render.alpha)
            total = (
                sds.surrogate(render.data)
                + config.weights.mask * l_mask
                + config.weights.sparsity * l_sparse
            )

            if not bool(torch.isfinite(total)):
                saved = save_checkpoint()
                raise NumericError(
                    f"non-finite training loss at iteration {it}",
                    diagnostics={
                        "iteration": it,
                        "mask_loss": float(l_mask.detach()),
                        "sparsity_loss": float(l_sparse.detach()),
                        "checkpoint": saved,
                    },
                )

            opt.zero_grad()
            total.backward()
            opt.step()

            _log_line(
                log_file,
                {
                    "iter": it,
                    "losses": {
                        "mask": float(l_mask.detach()),
                        "sparsity": float(l_sparse.detach()),
                        "sds_grad_norm": float(sds.grad.norm()),
                    },
                    "timestep": sds.t,
                    "camera": {"azimuth": camera.azimuth_deg, "elevation": camera.elevation_deg,
                               "distance": camera.distance},
                },
            )
            if config.checkpoint_dir and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                save_checkpoint()
            if config.stop_fn is not None and (it + 1) % config.probe_every == 0:
                if config.stop_fn(it + 1, component):
                    break
    finally:
        if log_file is not None:
            log_file.close()

    meta = dict(component.training_meta)
    meta.update({"stage": "latent", "iterations": config.iterations, "prompt": prompt})
    return replace(component, training_meta=meta)


def refine_component(
    component: RadianceComponent,
    avatar: AvatarRig,
    prompt: str,
    oracle: GuidanceOracle,
    config: RefineConfig = RefineConfig(),
) -> RadianceComponent:
    """RGB-space refinement: adds the embedding-similarity term and renders
    through the latent-to-RGB adapter at higher resolution.

    The adapter initializes from least squares over the provided
    latent/RGB calibration pairs unless the component already carries one.
    """
    rf = copy.deepcopy(component.field)
    if rf.rgb_adapter is None:
        if not config.calibration_pairs:
            raise ConfigurationError(
                "refinement needs latent/RGB calibration pairs to initialize the adapter"
            )
        rf.attach_adapter(fit_rgb_adapter(list(config.calibration_pairs)))

    cmap = CanonicalMap(avatar.model, avatar.params, component.frame)
    mesh = cmap.posed
    bvh = build_bvh(mesh)
    params = list(rf.parameters()) if config.train_adapter else [
        p for name, p in rf.named_parameters() if not name.startswith("rgb_adapter")
    ]
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    session = _OracleSession(oracle, config.retries, lambda: None, stage="refine")
    log_file = open(config.log_path, "a") if config.log_path else None
    rgb_field = rf.as_rgb_field()

    camera = None
    surface = None
    omega = None
    try:
        for it in range(config.iterations):
            if camera is None or (config.seg_cadence > 0 and it % config.seg_cadence == 0):
                camera = config.camera.sample(np_rng(config.seed, "refine-camera", it), config.rgb_size)
                geom = raster_geometry(mesh, camera, bvh)
                surface = rasterize(avatar.texture, camera, mesh, geom=geom)
                omega = None

            result = render_image(
                rgb_field,
                camera,
                mesh=mesh,
                surface=surface,
                n_samples=config.n_samples,
                seed=derive_seed(config.seed, "refine-render", it),
                canonical_map=cmap,
                bvh=bvh,
            )
            render = result.image

            if omega is None:
                raw = session.call(oracle.segment, render.data.detach(), component.part_keyword, camera)
                omega = _resize_mask(
                    torch.as_tensor(raw, dtype=torch.float64), (config.rgb_size, config.rgb_size)
                )

            gen = torch_generator(config.seed, "refine-sds", it)
            t_lo, t_hi = _t_range(
                oracle.schedule().num_timesteps, it, config.iterations, config.t_anneal_fraction
            )
            sds = session.call(
                sds_gradient, render.data, prompt, oracle, gen,
                mode="rgb", t_range=(t_lo, t_hi), camera=camera,
            )
            embed = session.call(
                oracle.embed_image, render.data.detach(), text=prompt, with_similarity_grad=True
            )
            l_mask = mask_loss(omega, render.alpha)
            l_sparse = sparsity_loss(render.alpha)
            total = (
                sds.surrogate(render.data)
                + config.weights.mask * l_mask
                + config.weights.sparsity * l_sparse
            )
            if embed.similarity_grad is not None and config.weights.similarity > 0:
                # d L_sim / d pixels = -d cos / d pixels, injected like SDS.
                sim_grad = -torch.as_tensor(embed.similarity_grad, dtype=render.data.dtype)
                total = total + config.weights.similarity * (render.data * sim_grad).sum()

            if not bool(torch.isfinite(total)):
                raise NumericError(
                    f"non-finite refinement loss at iteration {it}",
                    diagnostics={"iteration": it, "mask_loss": float(l_mask.detach())},
                )

            opt.zero_grad()
            total.backward()
            opt.step()

            _log_line(
                log_file,
                {
                    "iter": it,
                    "losses": {
                        "mask": float(l_mask.detach()),
                        "sparsity": float(l_sparse.detach()),
                        "similarity": None if embed.similarity is None else -embed.similarity,
                    },
                    "timestep": sds.t,
                    "camera": {"azimuth": camera.azimuth_deg, "elevation": camera.elevation_deg,
                               "distance": camera.distance},
                },
            )
    finally:
        if log_file is not None:
            log_file.close()

    meta = dict(component.training_meta)
    meta.update({"stage": "refined", "refine_iterations": config.iterations})
    return replace(component, field=rf, training_meta=meta)
