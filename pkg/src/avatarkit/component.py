"""Transferable radiance components and their .rfc checkpoint format."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import container
from .canonical import CanonicalFrame
from .errors import LoadError
from .field import FieldConfig, RadianceField

FORMAT = "rfc"
VERSION = 1


@dataclass
class RadianceComponent:
    """One style part (hair, hat, scarf, ...): a canonical-space field plus
    the kernel constants it was trained with and its provenance."""

    component_id: str
    field: RadianceField
    frame: CanonicalFrame
    prompt: str = ""
    part_keyword: str = ""
    seed: int = 0
    training_meta: dict = field(default_factory=dict)

    @property
    def channel_mode(self) -> int:
        return self.field.channels

    @property
    def has_adapter(self) -> bool:
        return self.field.rgb_adapter is not None

    def parameter_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, tensor in sorted(self.field.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().numpy().astype("<f8").tobytes())
        return h.hexdigest()

    def with_id(self, component_id: str) -> "RadianceComponent":
        return replace(self, component_id=component_id)


def save_component(component: RadianceComponent, path: str | Path) -> None:
    cfg = component.field.config
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "component_id": component.component_id,
        "arch": {
            "channels": cfg.channels,
            "hidden": cfg.hidden,
            "pos_bands": cfg.pos_bands,
            "dir_bands": cfg.dir_bands,
            "density_bias": cfg.density_bias,
            "seed": cfg.seed,
        },
        "frame": component.frame.to_json(),
        "provenance": {
            "prompt": component.prompt,
            "part_keyword": component.part_keyword,
            "seed": component.seed,
            "training": component.training_meta,
        },
        "has_adapter": component.has_adapter,
    }
    tensors: dict[str, np.ndarray] = {}
    for name, tensor in component.field.state_dict().items():
        tensors[f"param/{name}"] = tensor.detach().numpy().astype("<f4")
    container.write_container(path, manifest, tensors)


def load_component(path: str | Path, dtype: torch.dtype = torch.float64) -> RadianceComponent:
    manifest, tensors = container.read_container(path)
    if manifest.get("format") != FORMAT:
        raise LoadError(f"{path}: not a radiance component (format={manifest.get('format')!r})")
    if manifest.get("version") != VERSION:
        raise LoadError(
            f"{path}: unsupported rfc version {manifest.get('version')}; this build reads version {VERSION}"
        )
    arch = manifest.get("arch", {})
    cfg = FieldConfig(
        channels=int(arch.get("channels", 4)),
        hidden=int(arch.get("hidden", 128)),
        pos_bands=int(arch.get("pos_bands", 10)),
        dir_bands=int(arch.get("dir_bands", 4)),
        density_bias=float(arch.get("density_bias", 0.0)),
        seed=int(arch.get("seed", 0)),
    )
    rf = RadianceField(cfg, dtype=dtype)
    if manifest.get("has_adapter"):
        rf.rgb_adapter = nn.Linear(4, 3, dtype=dtype)

    state = {}
    for key, arr in tensors.items():
        if not key.startswith("param/"):
            raise LoadError(f"{path}: unexpected tensor block {key!r}")
        state[key[len("param/") :]] = torch.from_numpy(arr).to(dtype)
    try:
        rf.load_state_dict(state)
    except RuntimeError as exc:
        raise LoadError(f"{path}: parameter blocks do not match the declared architecture ({exc})") from exc

    prov = manifest.get("provenance", {})
    return RadianceComponent(
        component_id=manifest.get("component_id", Path(path).stem),
        field=rf,
        frame=CanonicalFrame.from_json(manifest.get("frame", {})),
        prompt=prov.get("prompt", ""),
        part_keyword=prov.get("part_keyword", ""),
        seed=int(prov.get("seed", 0)),
        training_meta=prov.get("training", {}),
    )
