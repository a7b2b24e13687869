"""Avatar assembly: textured skinned mesh plus attached radiance components,
try-on transfer between rigs, reposing/animation, and bundle persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch
from torch import Tensor

from .body import AvatarParams, BodyModel, skin_mesh
from .body_io import load_model, save_model
from .camera import Camera
from .canonical import CanonicalMap
from .component import RadianceComponent, load_component, save_component
from .errors import AttachmentError, LoadError
from .image import FeatureImage
from .raycast import build_bvh
from .texture import TextureMap, raster_geometry, rasterize
from .volume import RenderResult, render_image

BUNDLE_VERSION = 1


@dataclass(frozen=True)
class ComponentAttachment:
    component: RadianceComponent
    order: int
    enabled: bool = True

    @property
    def component_id(self) -> str:
        return self.component.component_id


@dataclass(frozen=True)
class AvatarRig:
    """Immutable avatar value: model + fitted params + texture + components.

    The stored pose is the canonical pose; animation reposes on the fly.
    Attach/detach return new rigs.
    """

    model: BodyModel
    params: AvatarParams
    texture: TextureMap
    components: tuple[ComponentAttachment, ...] = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [a.component_id for a in self.components]
        if len(ids) != len(set(ids)):
            raise AttachmentError(f"duplicate component ids: {sorted(ids)}")

    def component_ids(self) -> list[str]:
        return [a.component_id for a in sorted(self.components, key=lambda a: a.order)]

    def get(self, component_id: str) -> ComponentAttachment:
        for a in self.components:
            if a.component_id == component_id:
                return a
        raise AttachmentError(f"no component attached with id {component_id!r}")


def attach(avatar: AvatarRig, component: RadianceComponent, *, order: int | None = None,
           enabled: bool = True) -> AvatarRig:
    """Attach a component; parameters are shared, never copied or modified."""
    if any(a.component_id == component.component_id for a in avatar.components):
        raise AttachmentError(f"component id {component.component_id!r} already attached")
    if order is None:
        order = max((a.order for a in avatar.components), default=-1) + 1
    att = ComponentAttachment(component=component, order=order, enabled=enabled)
    return replace(avatar, components=avatar.components + (att,))


def detach(avatar: AvatarRig, component_id: str) -> AvatarRig:
    avatar.get(component_id)  # raises when absent
    kept = tuple(a for a in avatar.components if a.component_id != component_id)
    return replace(avatar, components=kept)


def render_avatar(
    avatar: AvatarRig,
    camera: Camera,
    *,
    theta: Tensor | None = None,
    psi: Tensor | None = None,
    n_samples: int = 64,
    seed: int = 0,
    filter: str = "bilinear",
) -> FeatureImage:
    """RGB render of the posed avatar with components composited in blend
    order; components canonicalize against the same pose, so they follow
    the body.

    Deterministic for a fixed seed: component k+1 renders against the
    composite of the mesh and components 1..k (sequential hybrid passes).
    """
    params = avatar.params
    if theta is not None or psi is not None:
        params = AvatarParams(
            beta=avatar.params.beta,
            theta=avatar.params.theta if theta is None else torch.as_tensor(theta, dtype=torch.float64),
            psi=avatar.params.psi if psi is None else torch.as_tensor(psi, dtype=torch.float64),
        )
        params.validate(avatar.model)

    mesh = skin_mesh(avatar.model, params)
    bvh = build_bvh(mesh)
    geom = raster_geometry(mesh, camera, bvh)
    composite = rasterize(avatar.texture, camera, mesh, filter=filter, geom=geom)

    active = [a for a in sorted(avatar.components, key=lambda a: a.order) if a.enabled]
    if not active:
        return composite

    cmap = CanonicalMap(avatar.model, params, active[0].component.frame)
    for k, att in enumerate(active):
        comp = att.component
        if comp.channel_mode == 4 and not comp.has_adapter:
            raise AttachmentError(
                f"component {comp.component_id!r} is latent-only; attach an RGB adapter before composing"
            )
        if comp.frame != cmap.frame:
            cmap = CanonicalMap(avatar.model, params, comp.frame)
        field_fn = comp.field.as_rgb_field() if comp.channel_mode == 4 else comp.field
        result: RenderResult = render_image(
            field_fn,
            camera,
            mesh=mesh,
            surface=composite,
            n_samples=n_samples,
            seed=seed + k,
            canonical_map=cmap,
            bvh=bvh,
        )
        composite = FeatureImage(
            data=result.image.data.detach(),
            alpha=torch.maximum(composite.alpha, result.image.alpha.detach()),
        )
    return composite


def animate(avatar: AvatarRig, theta: Tensor, psi: Tensor, camera: Camera, **kwargs) -> FeatureImage:
    """Repose the avatar to (theta, psi) and render; components track the
    reskinned body through canonicalization."""
    return render_avatar(avatar, camera, theta=theta, psi=psi, **kwargs)


# ---------------------------------------------------------------------------
# Bundle persistence: rig.json + texture.png(+sidecar) + components/*.rfc
# ---------------------------------------------------------------------------

def save_avatar(avatar: AvatarRig, path: str | Path, *, model_path: str | None = None) -> None:
    """Write the avatar bundle directory.

    The body model is stored alongside as model.bmdl unless ``model_path``
    names an external file to reference instead.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "components").mkdir(exist_ok=True)

    if model_path is None:
        save_model(avatar.model, path / "model.bmdl")
        model_ref = "model.bmdl"
    else:
        model_ref = model_path

    avatar.texture.save(path / "texture.png")
    comp_entries = []
    for att in avatar.components:
        fname = f"components/{att.component_id}.rfc"
        save_component(att.component, path / fname)
        comp_entries.append(
            {"id": att.component_id, "file": fname, "order": att.order, "enabled": att.enabled}
        )

    rig = {
        "version": BUNDLE_VERSION,
        "model": model_ref,
        "params": {
            "beta": avatar.params.beta.tolist(),
            "theta": avatar.params.theta.tolist(),
            "psi": avatar.params.psi.tolist(),
        },
        "texture": "texture.png",
        "components": comp_entries,
        "provenance": avatar.provenance,
    }
    (path / "rig.json").write_text(json.dumps(rig, indent=1, sort_keys=True))


def load_avatar(path: str | Path, *, model: BodyModel | None = None) -> AvatarRig:
    path = Path(path)
    rig_path = path / "rig.json"
    if not rig_path.exists():
        raise LoadError(f"{path}: not an avatar bundle (missing rig.json)")
    rig = json.loads(rig_path.read_text())
    version = rig.get("version")
    if version != BUNDLE_VERSION:
        raise LoadError(
            f"{path}: bundle version {version} unsupported; this build reads version "
            f"{BUNDLE_VERSION} (re-export the bundle or upgrade the package)"
        )

    if model is None:
        model_ref = path / rig["model"]
        if not model_ref.exists():
            raise LoadError(f"{path}: referenced model file {rig['model']!r} is missing")
        model = load_model(model_ref)

    missing = [c["id"] for c in rig.get("components", []) if not (path / c["file"]).exists()]
    if missing:
        raise LoadError(f"{path}: missing component files for ids {missing}")

    params = AvatarParams(
        beta=torch.tensor(rig["params"]["beta"], dtype=torch.float64),
        theta=torch.tensor(rig["params"]["theta"], dtype=torch.float64),
        psi=torch.tensor(rig["params"]["psi"], dtype=torch.float64),
    )
    params.validate(model)
    texture = TextureMap.load(path / rig.get("texture", "texture.png"))

    attachments = []
    for entry in rig.get("components", []):
        comp = load_component(path / entry["file"])
        if comp.component_id != entry["id"]:
            comp = comp.with_id(entry["id"])
        attachments.append(
            ComponentAttachment(component=comp, order=int(entry["order"]), enabled=bool(entry["enabled"]))
        )
    return AvatarRig(
        model=model,
        params=params,
        texture=texture,
        components=tuple(attachments),
        provenance=rig.get("provenance", {}),
    )
