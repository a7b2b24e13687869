"""Guidance losses: score-distillation pixel gradients, segmentation mask
loss, binary-entropy sparsity, and embedding similarity."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .camera import Camera
from .errors import ParameterError
from .oracle import GuidanceOracle, SdsRequest

# Loss weights: mask keeps the field inside the segmented part, sparsity
# suppresses floating density, similarity drives tokens of the text prompt,
# symmetry regularizes texture painting.
DEFAULT_MASK_WEIGHT = 0.1
DEFAULT_SPARSITY_WEIGHT = 0.0005
DEFAULT_SIMILARITY_WEIGHT = 1.0
DEFAULT_SYMMETRY_WEIGHT = 0.5


@dataclass(frozen=True)
class LossWeights:
    mask: float = DEFAULT_MASK_WEIGHT
    sparsity: float = DEFAULT_SPARSITY_WEIGHT
    similarity: float = DEFAULT_SIMILARITY_WEIGHT
    symmetry: float = DEFAULT_SYMMETRY_WEIGHT

    def __post_init__(self):
        if min(self.mask, self.sparsity, self.similarity, self.symmetry) < 0:
            raise ParameterError("loss weights must be nonnegative")


@dataclass
class SdsResult:
    grad: Tensor  # d L_sds / d pixels, same shape as the rendering
    t: int
    u_t: float
    eps: Tensor
    eps_hat: Tensor

    def surrogate(self, render: Tensor) -> Tensor:
        """Scalar whose gradient w.r.t. ``render`` equals ``grad``."""
        return (render * self.grad.detach()).sum()


def sds_gradient(
    render: Tensor,
    prompt: str,
    oracle: GuidanceOracle,
    generator: torch.Generator,
    *,
    mode: str = "latent",
    t_range: tuple[int, int] | None = None,
    camera: Camera | None = None,
) -> SdsResult:
    """One SDS draw: sample (t, eps), noise the rendering, query the critic,
    and return u_t (eps_hat - eps) as the pixel-space gradient.

    No gradients flow through the oracle; the result is injected via
    :meth:`SdsResult.surrogate`.  Deterministic given the generator state.
    """
    schedule = oracle.schedule()
    lo, hi = t_range if t_range is not None else (0, schedule.num_timesteps - 1)
    if not (0 <= lo <= hi < schedule.num_timesteps):
        raise ParameterError(f"t_range {lo, hi} outside schedule [0, {schedule.num_timesteps})")
    t = int(torch.randint(lo, hi + 1, (1,), generator=generator))
    q = render.detach()
    eps = torch.randn(q.shape, generator=generator, dtype=q.dtype)
    q_t = schedule.noise_image(q, eps, t)
    response = oracle.denoise(SdsRequest(q=q, prompt=prompt, t=t, eps=eps, q_t=q_t, mode=mode, camera=camera))
    eps_hat = torch.as_tensor(response.eps_hat, dtype=q.dtype)
    if eps_hat.shape != q.shape:
        raise ParameterError(f"critic returned shape {tuple(eps_hat.shape)}, expected {tuple(q.shape)}")
    grad = response.u_t * (eps_hat - eps)
    return SdsResult(grad=grad, t=t, u_t=response.u_t, eps=eps, eps_hat=eps_hat)


def mask_loss(omega: Tensor, omega_hat: Tensor) -> Tensor:
    """Mean absolute difference between target and rendered masks."""
    omega = torch.as_tensor(omega)
    if omega.shape != omega_hat.shape:
        raise ParameterError(f"mask shapes disagree: {tuple(omega.shape)} vs {tuple(omega_hat.shape)}")
    return (omega.to(omega_hat.dtype) - omega_hat).abs().mean()


SPARSITY_EPS = 1e-12


def sparsity_loss(omega_hat: Tensor) -> Tensor:
    """Binary entropy summed over pixels: -a ln a - (1-a) ln(1-a).

    Exactly zero at a in {0, 1} (the entropy convention 0 ln 0 = 0), maximal
    ln 2 at a = 1/2; pushes rendered masks toward binary.  The gradient is
    computed on an eps-clamped argument so near-binary pixels cannot inject
    infinities.
    """
    a = omega_hat.clamp(0.0, 1.0)
    safe = a.clamp(SPARSITY_EPS, 1.0 - SPARSITY_EPS)
    per_pixel = torch.special.entr(safe) + torch.special.entr(1.0 - safe)
    binary = (a <= 0.0) | (a >= 1.0)
    per_pixel = torch.where(binary, torch.zeros((), dtype=per_pixel.dtype), per_pixel)
    return per_pixel.sum()


def similarity_loss(z_img: Tensor, z_text: Tensor) -> Tensor:
    """Negative cosine similarity between image and text embeddings."""
    z_img = torch.as_tensor(z_img)
    z_text = torch.as_tensor(z_text, dtype=z_img.dtype)
    ni = torch.linalg.norm(z_img)
    nt = torch.linalg.norm(z_text)
    if float(ni.detach()) == 0.0 or float(nt.detach()) == 0.0:
        raise ParameterError("similarity loss is undefined for zero-norm embeddings")
    return -(z_img * z_text).sum() / (ni * nt)
