"""Triangle mesh value type and OBJ export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import Tensor

from .errors import ParameterError


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh: float64 vertex positions, int64 faces, optional per-vertex UVs."""

    vertices: Tensor  # (n_v, 3)
    faces: Tensor  # (n_t, 3)
    uvs: Tensor | None = None  # (n_v, 2) in [0, 1]

    def __post_init__(self):
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ParameterError(f"vertices must be (n_v, 3), got {tuple(self.vertices.shape)}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ParameterError(f"faces must be (n_t, 3), got {tuple(self.faces.shape)}")
        if self.faces.numel() and int(self.faces.max()) >= self.vertices.shape[0]:
            raise ParameterError("faces index out-of-range vertices")
        if self.uvs is not None and self.uvs.shape != (self.vertices.shape[0], 2):
            raise ParameterError(f"uvs must be (n_v, 2), got {tuple(self.uvs.shape)}")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices: Tensor) -> "Mesh":
        return Mesh(vertices=vertices, faces=self.faces, uvs=self.uvs)

    def bounds(self) -> tuple[Tensor, Tensor]:
        return self.vertices.min(dim=0).values, self.vertices.max(dim=0).values


def save_obj(mesh: Mesh, path: str | Path) -> None:
    """Write a text OBJ with per-vertex UVs (v/vt share indices)."""
    lines: list[str] = []
    for v in mesh.vertices.tolist():
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    if mesh.uvs is not None:
        for uv in mesh.uvs.tolist():
            lines.append(f"vt {uv[0]:.9g} {uv[1]:.9g}")
        for f in mesh.faces.tolist():
            a, b, c = (i + 1 for i in f)
            lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
    else:
        for f in mesh.faces.tolist():
            a, b, c = (i + 1 for i in f)
            lines.append(f"f {a} {b} {c}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path: str | Path) -> Mesh:
    """Read the OBJ subset written by :func:`save_obj`."""
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    faces: list[list[int]] = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return Mesh(
        vertices=torch.tensor(verts, dtype=torch.float64),
        faces=torch.tensor(faces, dtype=torch.int64),
        uvs=torch.tensor(uvs, dtype=torch.float64) if uvs else None,
    )
