"""Volume rendering: stratified ray sampling, alpha compositing, hybrid
mesh-terminated rendering, and full-image rendering.

The per-ray weights follow the standard transmittance form: alpha_i =
exp(-sum_{j<i} sigma_j dl_j) (1 - exp(-sigma_i dl_i)), so the total alpha
telescopes to 1 - exp(-sum sigma dl).  Hybrid rays stop at the first mesh
intersection; the remaining transmittance goes to the surface feature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
from torch import Tensor

from .camera import Camera
from .canonical import CanonicalMap
from .errors import ConfigurationError, ParameterError
from .image import FeatureImage
from .mesh import Mesh
from .raycast import TriangleBVH, build_bvh

DEFAULT_NEAR = -1.0  # relative to each ray's closest approach to the scene center
DEFAULT_FAR = 1.0
TRAIN_SAMPLES = 96
REFINE_SAMPLES = 128

# A field function maps (points (N,3), directions (N,3)) -> (sigma (N,), features (N,C)).
FieldFn = Callable[[Tensor, Tensor], tuple[Tensor, Tensor]]


@dataclass
class RaySamples:
    """Stratified (or uniform) depth samples along a batch of rays.

    ``deltas`` use the following-sample spacing with the far bound closing
    the last interval, so they sum to (far - depths[0]) per ray.  Degenerate
    rays (far <= near) carry zero-width samples and contribute no density.
    """

    origins: Tensor  # (N, 3)
    directions: Tensor  # (N, 3) unit
    near: Tensor  # (N,)
    far: Tensor  # (N,)
    depths: Tensor  # (N, S)
    deltas: Tensor  # (N, S)

    def __post_init__(self):
        n, s = self.depths.shape
        if self.deltas.shape != (n, s) or self.origins.shape != (n, 3) or self.directions.shape != (n, 3):
            raise ParameterError("inconsistent RaySamples shapes")

    @property
    def n_rays(self) -> int:
        return self.depths.shape[0]

    @property
    def n_samples(self) -> int:
        return self.depths.shape[1]

    def positions(self) -> Tensor:
        return self.origins[:, None, :] + self.depths[:, :, None] * self.directions[:, None, :]

    @staticmethod
    def _build(origins, directions, near, far, depths) -> "RaySamples":
        far_col = far[:, None]
        following = torch.cat([depths[:, 1:], far_col], dim=1)
        deltas = (following - depths).clamp_min(0.0)
        return RaySamples(
            origins=origins, directions=directions, near=near, far=far, depths=depths, deltas=deltas
        )

    @staticmethod
    def _normalize(origins, directions, near, far, n_samples):
        origins = torch.as_tensor(origins, dtype=torch.float64).reshape(-1, 3)
        directions = torch.as_tensor(directions, dtype=torch.float64).reshape(-1, 3)
        n = origins.shape[0]
        near = torch.as_tensor(near, dtype=torch.float64).expand(n).clone()
        far = torch.as_tensor(far, dtype=torch.float64).expand(n).clone()
        if n_samples < 1:
            raise ParameterError("need at least one sample per ray")
        return origins, directions, near, far, n

    @staticmethod
    def uniform(origins, directions, near, far, n_samples: int) -> "RaySamples":
        """Deterministic samples at the left edge of each uniform bin; the
        deltas then cover [near, far] exactly."""
        origins, directions, near, far, n = RaySamples._normalize(origins, directions, near, far, n_samples)
        span = (far - near).clamp_min(0.0)
        steps = torch.arange(n_samples, dtype=torch.float64) / n_samples
        depths = near[:, None] + span[:, None] * steps[None, :]
        return RaySamples._build(origins, directions, near, far, depths)

    @staticmethod
    def stratified(
        origins, directions, near, far, n_samples: int, generator: torch.Generator | None = None
    ) -> "RaySamples":
        """One uniform draw inside each of the n equal bins (per ray)."""
        origins, directions, near, far, n = RaySamples._normalize(origins, directions, near, far, n_samples)
        span = (far - near).clamp_min(0.0)
        jitter = torch.rand(n, n_samples, generator=generator, dtype=torch.float64)
        edges = torch.arange(n_samples, dtype=torch.float64)[None, :]
        depths = near[:, None] + span[:, None] * (edges + jitter) / n_samples
        return RaySamples._build(origins, directions, near, far, depths)


def compute_alphas(sigma: Tensor, deltas: Tensor) -> Tensor:
    """Per-sample compositing weights alpha_i; sigma clamped nonnegative."""
    tau = sigma.clamp_min(0.0) * deltas
    accum = torch.cumsum(tau, dim=-1)
    transmittance = torch.exp(-(accum - tau))  # exclusive prefix sum
    return transmittance * (1.0 - torch.exp(-tau))


def _eval_field(field_fn: FieldFn, samples: RaySamples) -> tuple[Tensor, Tensor]:
    pts = samples.positions().reshape(-1, 3)
    dirs = samples.directions[:, None, :].expand(-1, samples.n_samples, -1).reshape(-1, 3)
    sigma, feats = field_fn(pts, dirs)
    n, s = samples.depths.shape
    return sigma.reshape(n, s), feats.reshape(n, s, -1)


def render_ray(field_fn: FieldFn, samples: RaySamples) -> Tensor:
    """Pure volume rendering: C = sum_i alpha_i c_i; (N, C)."""
    sigma, feats = _eval_field(field_fn, samples)
    alphas = compute_alphas(sigma, samples.deltas)
    return (alphas[:, :, None] * feats).sum(dim=1)


def render_ray_hybrid(field_fn: FieldFn, samples: RaySamples, surface_features: Tensor) -> Tensor:
    """Mesh-terminated rendering: remaining transmittance hits the surface.

    ``samples`` must already be truncated to [near, surface depth); the
    surface occupies the final slot, so C = (1 - sum alpha) c* + sum alpha c.
    """
    sigma, feats = _eval_field(field_fn, samples)
    alphas = compute_alphas(sigma, samples.deltas)
    volume = (alphas[:, :, None] * feats).sum(dim=1)
    surface_weight = 1.0 - alphas.sum(dim=1, keepdim=True)
    return surface_weight * torch.as_tensor(surface_features, dtype=volume.dtype) + volume


def render_mask(field_fn: FieldFn, samples: RaySamples) -> Tensor:
    """Accumulated alpha per ray: the rendered component mask in [0, 1]."""
    sigma, _ = _eval_field(field_fn, samples)
    return compute_alphas(sigma, samples.deltas).sum(dim=1)


@dataclass
class RenderResult:
    image: FeatureImage  # data (H, W, C); alpha carries the rendered mask
    surface_hit: Tensor  # (H, W) bool: rays terminated by the mesh
    depth: Tensor  # (H, W) mesh depth where hit, +inf elsewhere


def scene_rays(camera: Camera, near: float = DEFAULT_NEAR, far: float = DEFAULT_FAR,
               center=(0.0, 0.0, 0.0)) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Camera rays with per-ray near/far measured around the scene center.

    Each ray's sampling window is [t_c + near, t_c + far] where t_c is the
    depth of the ray's closest approach to the scene center, matching the
    canonical unit-box convention.
    """
    origins_np, dirs_np = camera.rays()
    origins = torch.from_numpy(origins_np)
    directions = torch.from_numpy(dirs_np)
    center_t = torch.as_tensor(center, dtype=torch.float64)
    t_center = ((center_t[None, :] - origins) * directions).sum(dim=1)
    near_t = t_center + near
    far_t = t_center + far
    if bool((near_t <= 0).any()):
        raise ConfigurationError(
            "camera lies inside (or behind) the scene bounds; move it outside the sampling shell"
        )
    return origins, directions, near_t, far_t


def render_image(
    field_fn: FieldFn,
    camera: Camera,
    *,
    mesh: Mesh | None = None,
    surface: FeatureImage | None = None,
    channels: int | None = None,
    n_samples: int = TRAIN_SAMPLES,
    near: float = DEFAULT_NEAR,
    far: float = DEFAULT_FAR,
    seed: int | None = 0,
    stratified: bool = True,
    canonical_map: CanonicalMap | None = None,
    bvh: TriangleBVH | None = None,
    dtype: torch.dtype = torch.float64,
) -> RenderResult:
    """Render the field (optionally canonicalized and mesh-integrated).

    With a mesh present, rays hitting it run hybrid rendering with n-1
    volume slots and take the per-pixel surface feature from ``surface``;
    missing rays fall back to pure volume rendering with n slots.
    Deterministic for a fixed seed.
    """
    h, w = camera.height, camera.width
    origins, directions, near_t, far_t = scene_rays(camera, near, far)
    n_rays = h * w

    fn = field_fn
    if canonical_map is not None:
        fn = CanonicalFieldFn(field_fn, canonical_map, dtype=dtype)

    generator = None
    if stratified:
        generator = torch.Generator()
        generator.manual_seed(seed if seed is not None else 0)
    # One jitter matrix for every ray keeps results independent of the
    # hit/miss batch split.
    jitter = (
        torch.rand(n_rays, n_samples, generator=generator, dtype=torch.float64)
        if stratified
        else None
    )

    hit = torch.zeros(n_rays, dtype=torch.bool)
    depth = torch.full((n_rays,), float("inf"), dtype=torch.float64)
    if mesh is not None:
        bvh = bvh or build_bvh(mesh)
        hits = bvh.intersect_first(origins.numpy(), directions.numpy())
        hit = torch.from_numpy(hits.hit.copy())
        depth = torch.from_numpy(hits.t.copy())
        if surface is None:
            raise ConfigurationError("mesh-integrated rendering needs a surface feature image")
        if surface.data.shape[:2] != (h, w):
            raise ConfigurationError("surface feature image resolution must match the camera")

    if channels is None:
        channels = surface.channels if surface is not None else _probe_channels(fn, dtype)
    out = torch.zeros(n_rays, channels, dtype=dtype)
    mask = torch.zeros(n_rays, dtype=dtype)

    def make_samples(rows: Tensor, count: int, far_override: Tensor | None = None) -> RaySamples:
        nears = near_t[rows]
        fars = far_t[rows] if far_override is None else far_override
        span = (fars - nears).clamp_min(0.0)
        edges = torch.arange(count, dtype=torch.float64)[None, :]
        if jitter is not None:
            offs = (edges + jitter[rows][:, :count]) / count
        else:
            offs = edges / count
        depths = nears[:, None] + span[:, None] * offs
        return RaySamples._build(origins[rows], directions[rows], nears, fars, depths)

    miss_rows = (~hit).nonzero(as_tuple=True)[0]
    if len(miss_rows):
        samples = make_samples(miss_rows, n_samples)
        sigma, feats = _eval_field(fn, samples)
        alphas = compute_alphas(sigma, samples.deltas)
        out[miss_rows] = (alphas[:, :, None] * feats).sum(dim=1)
        mask[miss_rows] = alphas.sum(dim=1)

    hit_rows = hit.nonzero(as_tuple=True)[0]
    if len(hit_rows):
        surf_depth = torch.minimum(depth[hit_rows], far_t[hit_rows])
        count = max(n_samples - 1, 1)  # final slot is reserved for the surface
        samples = make_samples(hit_rows, count, far_override=surf_depth)
        sigma, feats = _eval_field(fn, samples)
        alphas = compute_alphas(sigma, samples.deltas)
        volume = (alphas[:, :, None] * feats).sum(dim=1)
        alpha_sum = alphas.sum(dim=1)
        surf_feat = surface.data.reshape(n_rays, -1)[hit_rows].to(dtype)
        out[hit_rows] = (1.0 - alpha_sum)[:, None] * surf_feat + volume
        mask[hit_rows] = alpha_sum

    image = FeatureImage(data=out.reshape(h, w, channels), alpha=mask.reshape(h, w))
    return RenderResult(image=image, surface_hit=hit.reshape(h, w), depth=depth.reshape(h, w))


def _probe_channels(fn: FieldFn, dtype: torch.dtype) -> int:
    probe = torch.zeros(1, 3, dtype=dtype)
    direction = torch.tensor([[0.0, 0.0, 1.0]], dtype=dtype)
    _, feats = fn(probe, direction)
    return feats.shape[-1]


class CanonicalFieldFn:
    """Field wrapper: canonicalize observation-space samples, evaluate the
    field only inside the influence region, leave empty space at zero."""

    def __init__(self, field_fn: FieldFn, canonical_map: CanonicalMap, dtype: torch.dtype = torch.float64):
        self.field_fn = field_fn
        self.map = canonical_map
        self.dtype = dtype

    def __call__(self, pts: Tensor, dirs: Tensor) -> tuple[Tensor, Tensor]:
        pc, dc, inside = self.map.map_points(pts.detach().numpy(), dirs.detach().numpy())
        inside_t = torch.from_numpy(inside)
        n = pts.shape[0]
        if not inside.any():
            channels = _probe_channels(self.field_fn, self.dtype)
            return torch.zeros(n, dtype=self.dtype), torch.zeros(n, channels, dtype=self.dtype)
        sigma_in, feats_in = self.field_fn(
            torch.from_numpy(pc[inside]).to(self.dtype), torch.from_numpy(dc[inside]).to(self.dtype)
        )
        sigma = torch.zeros(n, dtype=sigma_in.dtype)
        feats = torch.zeros(n, feats_in.shape[-1], dtype=feats_in.dtype)
        sigma = sigma.index_put((inside_t.nonzero(as_tuple=True)[0],), sigma_in)
        feats = feats.index_put((inside_t.nonzero(as_tuple=True)[0],), feats_in)
        return sigma, feats
