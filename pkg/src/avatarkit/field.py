"""Radiance field MLP: positionally encoded (point, view direction) to
(density, feature).  Feature channels are 4 (latent mode) or 3 (RGB mode);
an optional affine adapter converts 4-channel latents to RGB."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import ParameterError


def positional_encoding(x: Tensor, bands: int) -> Tensor:
    """[x, sin(2^k x), cos(2^k x)] for k < bands, concatenated on the last dim."""
    outs = [x]
    for k in range(bands):
        scaled = (2.0**k) * x
        outs.append(torch.sin(scaled))
        outs.append(torch.cos(scaled))
    return torch.cat(outs, dim=-1)


def direction_angles(d: Tensor) -> Tensor:
    """Unit directions (N, 3) to (azimuth, elevation) pairs (N, 2)."""
    az = torch.atan2(d[:, 0], d[:, 2])
    el = torch.asin(d[:, 1].clamp(-1.0, 1.0))
    return torch.stack([az, el], dim=1)


@dataclass(frozen=True)
class FieldConfig:
    channels: int = 4  # 4 = latent features, 3 = RGB
    hidden: int = 128
    pos_bands: int = 10
    dir_bands: int = 4
    density_bias: float = 0.0  # added to the raw density logit before softplus
    seed: int = 0

    def __post_init__(self):
        if self.channels not in (3, 4):
            raise ParameterError("channel mode must be 4 (latent) or 3 (RGB)")
        if self.hidden < 1 or self.pos_bands < 0 or self.dir_bands < 0:
            raise ParameterError("invalid field architecture")


class RadianceField(nn.Module):
    """Three hidden fully connected layers; softplus density head.

    Latent mode leaves features unsquashed; RGB mode passes them through a
    sigmoid so rendered colors stay in [0, 1].
    """

    def __init__(self, config: FieldConfig = FieldConfig(), dtype: torch.dtype = torch.float64):
        super().__init__()
        self.config = config
        in_dim = 3 * (1 + 2 * config.pos_bands) + 2 * (1 + 2 * config.dir_bands)
        h = config.hidden
        self.layers = nn.ModuleList(
            [
                nn.Linear(in_dim, h, dtype=dtype),
                nn.Linear(h, h, dtype=dtype),
                nn.Linear(h, h, dtype=dtype),
            ]
        )
        self.head = nn.Linear(h, 1 + config.channels, dtype=dtype)
        self.rgb_adapter: nn.Linear | None = None
        self._init_weights(config.seed)

    def _init_weights(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for lin in list(self.layers) + [self.head]:
                bound = 1.0 / math.sqrt(lin.weight.shape[1])
                lin.weight.uniform_(-bound, bound, generator=gen)
                lin.bias.uniform_(-bound, bound, generator=gen)

    @property
    def channels(self) -> int:
        return self.config.channels

    def attach_adapter(self, adapter: nn.Linear) -> None:
        if self.config.channels != 4:
            raise ParameterError("rgb adapter only applies to 4-channel latent fields")
        if adapter.in_features != 4 or adapter.out_features != 3:
            raise ParameterError("adapter must map 4 latent channels to 3 colors")
        self.rgb_adapter = adapter.to(self.head.weight.dtype)

    def forward(self, x: Tensor, d: Tensor) -> tuple[Tensor, Tensor]:
        """Density (N,) and features (N, C) at points x with view directions d."""
        enc = torch.cat(
            [
                positional_encoding(x, self.config.pos_bands),
                positional_encoding(direction_angles(d), self.config.dir_bands),
            ],
            dim=-1,
        )
        hidden = enc
        for lin in self.layers:
            hidden = torch.relu(lin(hidden))
        raw = self.head(hidden)
        sigma = torch.nn.functional.softplus(raw[:, 0] + self.config.density_bias)
        feat = raw[:, 1:]
        if self.config.channels == 3:
            feat = torch.sigmoid(feat)
        return sigma, feat

    def as_rgb_field(self):
        """Wrap this latent field so features pass through the RGB adapter."""
        if self.rgb_adapter is None:
            raise ParameterError("no rgb adapter attached")

        def fn(x: Tensor, d: Tensor) -> tuple[Tensor, Tensor]:
            sigma, feat = self(x, d)
            return sigma, self.rgb_adapter(feat).clamp(0.0, 1.0)

        return fn


def fit_rgb_adapter(pairs: list[tuple[Tensor, Tensor]], dtype: torch.dtype = torch.float64) -> nn.Linear:
    """Least-squares affine 4->3 map from (latent image, RGB image) pairs.

    Each pair is ((H, W, 4), (H, W, 3)); pixels stack into one linear system
    solved in closed form.
    """
    if not pairs:
        raise ParameterError("adapter initialization needs at least one latent/RGB pair")
    zs, cs = [], []
    for z, c in pairs:
        z = torch.as_tensor(z, dtype=dtype).reshape(-1, 4)
        c = torch.as_tensor(c, dtype=dtype).reshape(-1, 3)
        if z.shape[0] != c.shape[0]:
            raise ParameterError("latent/RGB pair resolutions disagree")
        zs.append(z)
        cs.append(c)
    z = torch.cat(zs)
    c = torch.cat(cs)
    design = torch.cat([z, torch.ones(z.shape[0], 1, dtype=dtype)], dim=1)
    # Minimum-norm solution via SVD: calibration latents often span a
    # lower-dimensional subspace, where plain lstsq drivers are undefined.
    solution = torch.linalg.pinv(design) @ c  # (5, 3)
    adapter = nn.Linear(4, 3, dtype=dtype)
    with torch.no_grad():
        adapter.weight.copy_(solution[:4].T)
        adapter.bias.copy_(solution[4])
    return adapter
