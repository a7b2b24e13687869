"""Feature images: an H x W x C grid (RGB colors or 4-channel latents) plus
an alpha/mask channel in [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .errors import ParameterError


@dataclass
class FeatureImage:
    data: Tensor  # (H, W, C), C in {3, 4}
    alpha: Tensor  # (H, W)

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] not in (3, 4):
            raise ParameterError(f"data must be (H, W, 3|4), got {tuple(self.data.shape)}")
        if self.alpha.shape != self.data.shape[:2]:
            raise ParameterError("alpha must match the spatial shape of data")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def detached(self) -> "FeatureImage":
        return FeatureImage(data=self.data.detach(), alpha=self.alpha.detach())

    def flipped_horizontal(self) -> "FeatureImage":
        return FeatureImage(data=torch.flip(self.data, dims=[1]), alpha=torch.flip(self.alpha, dims=[1]))

    def numpy(self) -> np.ndarray:
        return self.data.detach().cpu().numpy()


def to_uint8(data: Tensor | np.ndarray) -> np.ndarray:
    arr = data.detach().cpu().numpy() if torch.is_tensor(data) else np.asarray(data)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def to_uint16(data: Tensor | np.ndarray) -> np.ndarray:
    arr = data.detach().cpu().numpy() if torch.is_tensor(data) else np.asarray(data)
    return np.clip(np.rint(arr * 65535.0), 0, 65535).astype(np.uint16)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB between arrays of the same shape."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
