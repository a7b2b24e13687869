"""Procedural guidance parts: an analytic canonical-space shell component
with a matching pixel-difference critic and silhouette segmenter.

These make the full pipeline runnable and verifiable without any pretrained
model: the critic pulls renders toward the hybrid render of the analytic
shell, and the segmenter returns its exact (occlusion-aware) silhouette.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .camera import Camera
from .canonical import CanonicalFrame, CanonicalMap
from .compose import AvatarRig
from .errors import ParameterError
from .image import FeatureImage
from .oracle import ReferenceCodec, SdsRequest, SyntheticOracle, target_critic
from .raycast import TriangleBVH, build_bvh
from .texture import raster_geometry, rasterize
from .volume import render_image, scene_rays


@dataclass(frozen=True)
class ShellSpec:
    """Spherical shell in canonical space (a beanie-like cap above th scalp)."""

    center: tuple[float, float, float] = (0.0, 0.30, 0.0)
    r_inner: float = 0.18
    r_outer: float = 0.32
    density: float = 40.0
    color: tuple[float, float, float] = (0.8, 0.3, 0.2)

    def __post_init__(self):
        if not (0 < self.r_inner < self.r_outer):
            raise ParameterError("shell needs 0 < r_inner < r_outer")


def shell_field(spec: ShellSpec, channels: int = 4, codec: ReferenceCodec | None = None):
    """Analytic field: constant density inside the shell band, zero outside.

    In latent mode the feature is the codec's channel lift of the shell
    color so decoded renders come back in that color.
    """
    if channels == 4:
        codec = codec or ReferenceCodec(factor=1)
        feat = codec.channel_lift(torch.tensor(spec.color, dtype=torch.float64))
    else:
        feat = torch.tensor(spec.color, dtype=torch.float64)
    center = torch.tensor(spec.center, dtype=torch.float64)

    def fn(points: Tensor, dirs: Tensor):
        r = (points - center).norm(dim=1)
        inside = (r >= spec.r_inner) & (r <= spec.r_outer)
        sigma = torch.where(inside, torch.as_tensor(spec.density, dtype=points.dtype), torch.zeros((), dtype=points.dtype))
        feats = inside[:, None].to(points.dtype) * feat[None, :].to(points.dtype)
        return sigma, feats

    return fn


def shell_silhouette(
    spec: ShellSpec,
    camera: Camera,
    cmap: CanonicalMap,
    bvh: TriangleBVH | None = None,
) -> Tensor:
    """Exact binary mask of shell pixels visible in front of the mesh.

    A pixel is on iff its ray enters the (observation-space image of the)
    shell's outer sphere before hitting the mesh.  The shell lives in
    canonical space; at canonical-pose rendering of an avatar the shell's
    observation-space position is found by probing canonicalized ray points.
    """
    origins, directions, near_t, far_t = scene_rays(camera)
    n = origins.shape[0]
    # Sample each ray densely and test canonicalized points against the band.
    steps = 96
    ts = torch.linspace(0, 1, steps, dtype=torch.float64)[None, :]
    depths = near_t[:, None] + (far_t - near_t)[:, None] * ts
    pts = origins[:, None, :] + depths[:, :, None] * directions[:, None, :]
    pc, _, inside_region = cmap.map_points(pts.reshape(-1, 3).numpy())
    center = np.asarray(spec.center)
    r = np.linalg.norm(pc - center, axis=1)
    in_shell = inside_region & (r >= spec.r_inner) & (r <= spec.r_outer)
    in_shell = in_shell.reshape(n, steps)

    mesh_t = np.full(n, np.inf)
    if bvh is None:
        bvh = build_bvh(cmap.posed)
    hits = bvh.intersect_first(origins.numpy(), directions.numpy())
    mesh_t[hits.hit] = hits.t[hits.hit]

    before_mesh = depths.numpy() < mesh_t[:, None]
    mask = (in_shell & before_mesh).any(axis=1)
    return torch.from_numpy(mask.astype(np.float64)).reshape(camera.height, camera.width)


class ShellGuidance:
    """Bundle of procedural oracle parts for one avatar + shell target."""

    def __init__(
        self,
        avatar: AvatarRig,
        spec: ShellSpec = ShellSpec(),
        latent_size: int = 48,
        n_samples: int = 32,
        codec_factor: int = 2,
    ):
        self.avatar = avatar
        self.spec = spec
        self.latent_size = latent_size
        self.n_samples = n_samples
        self.codec = ReferenceCodec(factor=codec_factor)
        self.cmap = CanonicalMap(avatar.model, avatar.params, frame=CanonicalFrame())
        self.mesh = self.cmap.posed
        self.bvh = build_bvh(self.mesh)
        self._target_cache: dict = {}

    def target_render(self, camera: Camera, mode: str) -> Tensor:
        """Hybrid render of the analytic shell over the textured mesh."""
        key = (camera, mode)
        if key not in self._target_cache:
            channels = 4 if mode == "latent" else 3
            if mode == "latent":
                raster_cam = camera.resized(
                    camera.width * self.codec.factor, camera.height * self.codec.factor
                )
                rgb = rasterize(self.avatar.texture, raster_cam, self.mesh,
                                geom=raster_geometry(self.mesh, raster_cam, self.bvh))
                surface = FeatureImage(
                    data=self.codec.encode(rgb.data),
                    alpha=torch.ones(camera.height, camera.width, dtype=torch.float64),
                )
            else:
                surface = rasterize(self.avatar.texture, camera, self.mesh,
                                    geom=raster_geometry(self.mesh, camera, self.bvh))
            cam = camera
            result = render_image(
                shell_field(self.spec, channels, self.codec),
                cam,
                mesh=self.mesh,
                surface=surface,
                n_samples=self.n_samples,
                seed=0,
                stratified=False,
                canonical_map=self.cmap,
                bvh=self.bvh,
            )
            self._target_cache[key] = result.image.data.detach()
        return self._target_cache[key]

    def critic(self, request: SdsRequest, schedule):
        if request.camera is None:
            raise ParameterError("procedural critic needs the camera on the request")
        return target_critic(lambda req: self.target_render(req.camera, req.mode))(request, schedule)

    def segmenter(self, image, keyword, camera):
        if camera is None:
            raise ParameterError("procedural segmenter needs the camera")
        size = image.shape[0] if hasattr(image, "shape") else self.latent_size
        cam = camera if camera.height == size else camera.resized(size, size)
        return shell_silhouette(self.spec, cam, self.cmap, self.bvh)

    def generator(self, prompt, size, depth=None, current=None, known_mask=None, seed=0, camera=None):
        """Texture-painting target: smooth procedural color from the depth map."""
        h, w = size
        img = torch.zeros(h, w, 3, dtype=torch.float64)
        if depth is not None:
            d = torch.as_tensor(depth, dtype=torch.float64)
            img[:, :, 0] = 0.55 + 0.3 * d
            img[:, :, 1] = 0.45 + 0.2 * d
            img[:, :, 2] = 0.40 + 0.1 * d
        else:
            img[:] = torch.tensor([0.6, 0.5, 0.45], dtype=torch.float64)
        return img.clamp(0.0, 1.0)

    def oracle(self) -> SyntheticOracle:
        return SyntheticOracle(
            critic=self.critic,
            generator=self.generator,
            segmenter=self.segmenter,
            codec=self.codec,
        )

    def silhouette_iou(self, component, cameras: list[Camera], threshold: float = 0.5) -> float:
        """IoU between the component's rendered mask and the analytic shell
        silhouette, averaged over probe cameras."""
        inter = 0.0
        union = 0.0
        for cam in cameras:
            raster_cam = cam.resized(cam.width * self.codec.factor, cam.height * self.codec.factor)
            rgb = rasterize(self.avatar.texture, raster_cam, self.mesh, geom=raster_geometry(self.mesh, raster_cam, self.bvh))
            surface = FeatureImage(
                data=self.codec.encode(rgb.data),
                alpha=torch.ones(cam.height, cam.width, dtype=torch.float64),
            )
            result = render_image(
                component.field,
                cam,
                mesh=self.mesh,
                surface=surface,
                n_samples=self.n_samples,
                seed=123,
                stratified=False,
                canonical_map=self.cmap,
                bvh=self.bvh,
            )
            got = (result.image.alpha.detach() >= threshold).numpy()
            want = shell_silhouette(self.spec, cam, self.cmap, self.bvh).numpy() >= 0.5
            inter += float(np.logical_and(got, want).sum())
            union += float(np.logical_or(got, want).sum())
        return inter / union if union else 1.0
