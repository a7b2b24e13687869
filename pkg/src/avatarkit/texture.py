"""Iterative multi-view UV texture painting.

Each scheduled view renders the current texture, asks the generation oracle
for a view image conditioned on depth / the already-painted content, and
back-projects by optimizing visible texels with Adam under an L1 objective
plus a bilateral-symmetry term between paired views.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch
from torch import Tensor

from . import png16
from .camera import Camera
from .errors import ConfigurationError, LoadError, ParameterError, StageError
from .image import FeatureImage, to_uint8, to_uint16
from .mesh import Mesh
from .raycast import TriangleBVH, build_bvh
from .seeds import derive_seed

if TYPE_CHECKING:  # pragma: no cover
    from .oracle import GuidanceOracle

DEFAULT_UV_SIZE = 512
DEFAULT_RENDER_SIZE = 512
SYMMETRY_WEIGHT = 0.5  # lambda_sym


@dataclass
class TextureMap:
    """UV color grid in [0, 1] plus a monotonically growing painted mask."""

    data: Tensor  # (H, W, 3) float64
    validity: Tensor  # (H, W) bool

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ParameterError(f"texture data must be (H, W, 3), got {tuple(self.data.shape)}")
        if self.validity.shape != self.data.shape[:2]:
            raise ParameterError("validity mask must match texture resolution")

    @staticmethod
    def blank(height: int = DEFAULT_UV_SIZE, width: int | None = None, fill: float = 0.5) -> "TextureMap":
        width = width or height
        return TextureMap(
            data=torch.full((height, width, 3), fill, dtype=torch.float64),
            validity=torch.zeros(height, width, dtype=torch.bool),
        )

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        path = Path(path)
        png16.write_png(path, to_uint16(self.data))
        sidecar = {
            "version": 1,
            "shape": [int(self.data.shape[0]), int(self.data.shape[1])],
            "validity": base64.b64encode(np.packbits(self.validity.numpy())).decode("ascii"),
        }
        sidecar.update(extra or {})
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, sort_keys=True))

    @staticmethod
    def load(path: str | Path) -> "TextureMap":
        path = Path(path)
        img = png16.read_png(path)
        if img.dtype != np.uint16 or img.ndim != 3:
            raise LoadError(f"{path}: expected a 16-bit RGB texture")
        sidecar_path = path.with_suffix(path.suffix + ".json")
        h, w = img.shape[:2]
        if sidecar_path.exists():
            sidecar = json.loads(sidecar_path.read_text())
            bits = np.unpackbits(np.frombuffer(base64.b64decode(sidecar["validity"]), dtype=np.uint8))
            validity = torch.from_numpy(bits[: h * w].reshape(h, w).astype(bool))
        else:
            validity = torch.zeros(h, w, dtype=torch.bool)
        return TextureMap(data=torch.from_numpy(img.astype(np.float64) / 65535.0), validity=validity)


@dataclass(frozen=True)
class ViewSchedule:
    """Ordered painting views plus the left/right symmetry pairing.

    ``pairing[i] == i`` means view i is compared against its own horizontal
    flip; ``pairing[i] == j`` compares view i's rendering against the flip of
    the image generated earlier at view j.  Views absent from the map carry
    no symmetry term.
    """

    cameras: tuple[Camera, ...]
    pairing: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for i, j in self.pairing.items():
            if not (0 <= i < len(self.cameras)) or not (0 <= j <= i):
                raise ParameterError(f"pairing {i}->{j} must reference an earlier (or same) view")

    def __len__(self) -> int:
        return len(self.cameras)

    @staticmethod
    def default(
        n_views: int = 10,
        distance: float = 2.2,
        elevation_deg: float = 0.0,
        fov_deg: float = 45.0,
        size: int = DEFAULT_RENDER_SIZE,
    ) -> "ViewSchedule":
        """Ten-view orbit: front, alternating left/right sweeps, then back.

        Views are 0-indexed; front (0) and back (9) pair with their own
        flips, right-side views (2, 4, 6, 8) pair with the left-side views
        (1, 3, 5, 7) painted just before them.
        """
        if n_views != 10:
            azimuths = list(np.linspace(0.0, 360.0, n_views, endpoint=False))
            pairing: dict[int, int] = {}
        else:
            azimuths = [0.0, -45.0, 45.0, -90.0, 90.0, -135.0, 135.0, -160.0, 160.0, 180.0]
            pairing = {0: 0, 9: 9, 2: 1, 4: 3, 6: 5, 8: 7}
        cams = tuple(
            Camera(
                azimuth_deg=az,
                elevation_deg=elevation_deg,
                distance=distance,
                fov_deg=fov_deg,
                width=size,
                height=size,
            )
            for az in azimuths
        )
        return ViewSchedule(cameras=cams, pairing=pairing)

    def to_json(self) -> dict:
        return {
            "cameras": [c.to_json() for c in self.cameras],
            "pairing": {str(k): v for k, v in self.pairing.items()},
        }

    @staticmethod
    def from_json(data: dict) -> "ViewSchedule":
        return ViewSchedule(
            cameras=tuple(Camera.from_json(c) for c in data["cameras"]),
            pairing={int(k): int(v) for k, v in data.get("pairing", {}).items()},
        )

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RasterGeometry:
    """Camera-frozen rasterization: which pixel sees which texel."""

    width: int
    height: int
    hit: np.ndarray  # (H*W,) bool
    uv: Tensor  # (n_hit, 2) float64
    depth: np.ndarray  # (H*W,) float64, inf where missed
    face: np.ndarray  # (H*W,) int64


def raster_geometry(mesh: Mesh, camera: Camera, bvh: TriangleBVH | None = None) -> RasterGeometry:
    """Ray-cast rasterization of the mesh into the camera's pixel grid."""
    if mesh.uvs is None:
        raise ConfigurationError("mesh has no UVs; texture rasterization needs a UV unwrap")
    bvh = bvh or build_bvh(mesh)
    origins, dirs = camera.rays()
    hits = bvh.intersect_first(origins, dirs)
    face_uvs = mesh.uvs.detach().numpy()[mesh.faces.numpy()]  # (n_t, 3, 2)
    uv = np.einsum("nc,ncu->nu", hits.bary[hits.hit], face_uvs[hits.face[hits.hit]])
    return RasterGeometry(
        width=camera.width,
        height=camera.height,
        hit=hits.hit,
        uv=torch.from_numpy(uv),
        depth=hits.t,
        face=hits.face,
    )


def sample_texture(texture_data: Tensor, uv: Tensor, filter: str = "bilinear") -> Tensor:
    """Sample texel colors at UV points; differentiable w.r.t. the texels.

    UV (0, 0) is the bottom-left texel center, (1, 1) the top-right.
    """
    h, w = texture_data.shape[:2]
    x = uv[:, 0].clamp(0.0, 1.0) * (w - 1)
    y = (1.0 - uv[:, 1].clamp(0.0, 1.0)) * (h - 1)
    flat = texture_data.reshape(h * w, -1)
    if filter == "nearest":
        xi = x.round().long()
        yi = y.round().long()
        return flat[yi * w + xi]
    if filter != "bilinear":
        raise ParameterError(f"unknown texture filter {filter!r}")
    x0 = x.floor().long().clamp(0, w - 1)
    y0 = y.floor().long().clamp(0, h - 1)
    x1 = (x0 + 1).clamp(0, w - 1)
    y1 = (y0 + 1).clamp(0, h - 1)
    fx = (x - x0).unsqueeze(1)
    fy = (y - y0).unsqueeze(1)
    c00 = flat[y0 * w + x0]
    c01 = flat[y0 * w + x1]
    c10 = flat[y1 * w + x0]
    c11 = flat[y1 * w + x1]
    top = c00 * (1 - fx) + c01 * fx
    bot = c10 * (1 - fx) + c11 * fx
    return top * (1 - fy) + bot * fy


def footprint_texels(texture_shape: tuple[int, int], uv: Tensor, filter: str = "bilinear") -> Tensor:
    """Flat indices of every texel the given UV samples actually weight.

    Bilinear corners whose interpolation weight is zero (samples landing
    exactly on a texel grid line) are excluded: they receive no gradient,
    so they are not painted by this view.
    """
    h, w = texture_shape
    x = uv[:, 0].clamp(0.0, 1.0) * (w - 1)
    y = (1.0 - uv[:, 1].clamp(0.0, 1.0)) * (h - 1)
    if filter == "nearest":
        return (y.round().long() * w + x.round().long()).unique()
    x0 = x.floor().long().clamp(0, w - 1)
    y0 = y.floor().long().clamp(0, h - 1)
    x1 = (x0 + 1).clamp(0, w - 1)
    y1 = (y0 + 1).clamp(0, h - 1)
    fx = x - x0
    fy = y - y0
    idx = torch.cat([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1])
    weight = torch.cat([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy])
    return idx[weight > 0.0].unique()


def rasterize(
    texture: TextureMap,
    camera: Camera,
    mesh: Mesh,
    *,
    filter: str = "bilinear",
    geom: RasterGeometry | None = None,
) -> FeatureImage:
    """Render the textured mesh; background has color 0 and alpha 0."""
    geom = geom if geom is not None else raster_geometry(mesh, camera)
    h, w = geom.height, geom.width
    colors = sample_texture(texture.data, geom.uv, filter)
    hit = torch.from_numpy(geom.hit)
    data = torch.zeros(h * w, 3, dtype=texture.data.dtype)
    data[hit] = colors
    alpha = hit.to(texture.data.dtype)
    return FeatureImage(data=data.reshape(h, w, 3), alpha=alpha.reshape(h, w))


def depth_image(geom: RasterGeometry) -> Tensor:
    """Normalized [0, 1] inverse depth; background 0 (generator conditioning)."""
    h, w = geom.height, geom.width
    depth = torch.from_numpy(geom.depth.copy())
    hit = torch.from_numpy(geom.hit)
    inv = torch.zeros(h * w, dtype=torch.float64)
    inv[hit] = 1.0 / depth[hit]
    if bool(hit.any()):
        lo = float(inv[hit].min())
        hi = float(inv[hit].max())
        span = hi - lo
        inv[hit] = (inv[hit] - lo) / span if span > 0 else 1.0
    return inv.reshape(h, w)


def symmetry_loss(rendered: Tensor, mirror_target: Tensor) -> Tensor:
    """Mean squared error against the designated mirror target."""
    if rendered.shape != mirror_target.shape:
        raise ParameterError(
            f"symmetry operands must share shape, got {tuple(rendered.shape)} vs {tuple(mirror_target.shape)}"
        )
    diff = rendered - mirror_target
    return (diff * diff).mean()


def project_view(
    texture_prev: TextureMap,
    target_image: Tensor,
    camera: Camera,
    mesh: Mesh,
    lr: float = 0.01,
    *,
    steps: int = 200,
    tolerance: float = 1e-5,
    sym_target: Tensor | None = None,
    sym_weight: float = SYMMETRY_WEIGHT,
    filter: str = "bilinear",
    geom: RasterGeometry | None = None,
) -> TextureMap:
    """Back-project one view: optimize the texels visible from ``camera`` so
    the rendering matches ``target_image`` (L1); texels outside the view's
    footprint keep their previous values bit-exactly."""
    target = torch.as_tensor(target_image, dtype=texture_prev.data.dtype)
    if not bool(torch.isfinite(target).all()):
        raise ParameterError("target image contains non-finite pixels")
    geom = geom if geom is not None else raster_geometry(mesh, camera)
    if target.shape != (geom.height, geom.width, 3):
        raise ParameterError(
            f"target resolution {tuple(target.shape)} != render resolution ({geom.height}, {geom.width}, 3)"
        )

    hit = torch.from_numpy(geom.hit)
    target_pix = target.reshape(-1, 3)[hit]
    sym_pix = None
    if sym_target is not None:
        sym = torch.as_tensor(sym_target, dtype=texture_prev.data.dtype)
        sym_pix = sym.reshape(-1, 3)[hit]

    leaf = texture_prev.data.clone().requires_grad_(True)
    opt = torch.optim.Adam([leaf], lr=lr)
    prev_loss = float("inf")
    for _ in range(steps):
        opt.zero_grad()
        colors = sample_texture(leaf, geom.uv, filter)
        loss = (colors - target_pix).abs().mean()
        if sym_pix is not None:
            loss = loss + sym_weight * symmetry_loss(colors, sym_pix)
        val = float(loss.detach())
        if abs(prev_loss - val) < tolerance:
            break
        loss.backward()
        opt.step()
        prev_loss = val

    new_data = leaf.detach()
    visible = footprint_texels(tuple(texture_prev.data.shape[:2]), geom.uv, filter)
    # Clamp only painted texels; untouched ones stay bit-exact.
    flat = new_data.reshape(-1, 3)
    flat[visible] = flat[visible].clamp(0.0, 1.0)
    validity = texture_prev.validity.clone().reshape(-1)
    validity[visible] = True
    h, w = texture_prev.data.shape[:2]
    return TextureMap(data=flat.reshape(h, w, 3), validity=validity.reshape(h, w))


def paint_texture(
    mesh: Mesh,
    schedule: ViewSchedule,
    oracle: "GuidanceOracle",
    prompt: str,
    *,
    texture: TextureMap | None = None,
    uv_size: int = DEFAULT_UV_SIZE,
    lr: float = 0.01,
    steps: int = 200,
    tolerance: float = 1e-5,
    sym_weight: float = SYMMETRY_WEIGHT,
    filter: str = "bilinear",
    seed: int = 0,
    resume_dir: str | Path | None = None,
) -> TextureMap:
    """Run the full view schedule; resumable from the last completed view.

    Raises :class:`StageError` naming the failing view if the oracle errors;
    progress up to the previous view is persisted under ``resume_dir``.
    """
    texture = texture if texture is not None else TextureMap.blank(uv_size)
    bvh = build_bvh(mesh)
    start_view = 0
    generated: dict[int, Tensor] = {}

    state_path = None
    if resume_dir is not None:
        resume_dir = Path(resume_dir)
        resume_dir.mkdir(parents=True, exist_ok=True)
        state_path = resume_dir / "paint_state.json"
        if state_path.exists():
            state = json.loads(state_path.read_text())
            if state.get("schedule_hash") == schedule.content_hash():
                start_view = int(state["completed_views"])
                texture = TextureMap.load(resume_dir / "texture.png")
                for j in range(start_view):
                    img_path = resume_dir / f"view_{j:02d}.png"
                    if img_path.exists():
                        generated[j] = torch.from_numpy(
                            png16.read_png(img_path).astype(np.float64) / 255.0
                        )

    for i in range(start_view, len(schedule)):
        camera = schedule.cameras[i]
        geom = raster_geometry(mesh, camera, bvh)
        current = rasterize(texture, camera, mesh, filter=filter, geom=geom)
        known = torch.zeros(geom.height * geom.width, dtype=torch.float64)
        known[torch.from_numpy(geom.hit)] = sample_texture(
            texture.validity.to(torch.float64).unsqueeze(-1), geom.uv, "nearest"
        ).squeeze(-1)
        try:
            img = oracle.generate(
                prompt=prompt,
                size=(geom.height, geom.width),
                depth=depth_image(geom),
                current=current.data.detach(),
                known_mask=known.reshape(geom.height, geom.width),
                seed=derive_seed(seed, "paint", i),
                camera=camera,
            )
        except Exception as exc:
            raise StageError(f"generation oracle failed at view {i}", stage="paint", view=i) from exc
        img = torch.as_tensor(img, dtype=torch.float64)
        generated[i] = img

        sym_target = None
        if i in schedule.pairing:
            j = schedule.pairing[i]
            source = img if j == i else generated.get(j)
            if source is not None:
                sym_target = torch.flip(source, dims=[1])

        texture = project_view(
            texture,
            img,
            camera,
            mesh,
            lr=lr,
            steps=steps,
            tolerance=tolerance,
            sym_target=sym_target,
            sym_weight=sym_weight,
            filter=filter,
            geom=geom,
        )

        if resume_dir is not None:
            texture.save(resume_dir / "texture.png", extra={"schedule_hash": schedule.content_hash()})
            png16.write_png(resume_dir / f"view_{i:02d}.png", to_uint8(img))
            state_path.write_text(
                json.dumps({"completed_views": i + 1, "schedule_hash": schedule.content_hash()})
            )

    return texture
