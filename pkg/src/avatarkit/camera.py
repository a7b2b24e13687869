"""Perspective cameras on an orbit around the scene center.

Conventions: right-handed world, +y up, the head's face points toward +z.
Azimuth 0 looks at the face from the front; positive azimuth orbits toward
the avatar's left (+x camera position).  Negating azimuth mirrors the scene
left/right, so a view at -a renders the horizontal flip of the view at +a
for an x-symmetric scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class Camera:
    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0
    distance: float = 2.2
    fov_deg: float = 45.0
    width: int = 512
    height: int = 512
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.distance <= 0 or self.fov_deg <= 0 or self.fov_deg >= 180:
            raise ParameterError("camera needs positive distance and fov in (0, 180)")
        if self.width < 1 or self.height < 1:
            raise ParameterError("camera resolution must be at least 1x1")

    @property
    def position(self) -> np.ndarray:
        az = math.radians(self.azimuth_deg)
        el = math.radians(self.elevation_deg)
        offs = np.array(
            [
                math.cos(el) * math.sin(az),
                math.sin(el),
                math.cos(el) * math.cos(az),
            ]
        )
        return np.asarray(self.target, dtype=np.float64) + self.distance * offs

    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation; camera looks down its local -z."""
        pos = self.position
        fwd = np.asarray(self.target, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        up = np.array([0.0, 1.0, 0.0])
        if abs(fwd @ up) > 1.0 - 1e-9:  # looking straight up/down
            up = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        return np.stack([right, true_up, -fwd], axis=1)

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel rays through pixel centers; row 0 is the top of the image.

        Returns (origins, directions), both (H*W, 3) float64 in row-major
        pixel order; directions are unit length.
        """
        h, w = self.height, self.width
        tan_half = math.tan(math.radians(self.fov_deg) / 2)
        aspect = w / h
        xs = (np.arange(w) + 0.5) / w * 2.0 - 1.0
        ys = 1.0 - (np.arange(h) + 0.5) / h * 2.0
        gx, gy = np.meshgrid(xs * tan_half * aspect, ys * tan_half)
        dirs_cam = np.stack([gx, gy, -np.ones_like(gx)], axis=-1).reshape(-1, 3)
        dirs = dirs_cam @ self.rotation().T
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(self.position, dirs.shape).copy()
        return origins, dirs

    def resized(self, width: int, height: int) -> "Camera":
        return replace(self, width=width, height=height)

    def mirrored(self) -> "Camera":
        return replace(self, azimuth_deg=-self.azimuth_deg)

    def to_json(self) -> dict:
        return {
            "azimuth_deg": self.azimuth_deg,
            "elevation_deg": self.elevation_deg,
            "distance": self.distance,
            "fov_deg": self.fov_deg,
            "width": self.width,
            "height": self.height,
            "target": list(self.target),
        }

    @staticmethod
    def from_json(data: dict) -> "Camera":
        return Camera(
            azimuth_deg=float(data["azimuth_deg"]),
            elevation_deg=float(data["elevation_deg"]),
            distance=float(data["distance"]),
            fov_deg=float(data.get("fov_deg", 45.0)),
            width=int(data.get("width", 512)),
            height=int(data.get("height", 512)),
            target=tuple(data.get("target", (0.0, 0.0, 0.0))),
        )
