"""Shape recovery from 3D facial landmarks.

Minimizes an L1 landmark-to-vertex objective over shape, pose, and
expression coefficients with quadratic shape/expression regularization,
then freezes pose and expression at their canonical values for the
downstream stages (pose is poorly constrained by face landmarks alone).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .body import AvatarParams, BodyModel, vertex_transforms
from .errors import FitError, LoadError, ParameterError

L1_SMOOTH_EPS = 1e-8  # |x| ~ sqrt(x^2 + eps^2) keeps the objective differentiable


@dataclass(frozen=True)
class LandmarkSet:
    """Target points with their model-vertex correspondences."""

    points: Tensor  # (n_e, 3)
    vertex_ids: Tensor  # (n_e,) indices into the model
    confidence: Tensor  # (n_e,) in [0, 1]

    def __post_init__(self):
        n = self.points.shape[0]
        if self.points.shape != (n, 3) or self.vertex_ids.shape != (n,) or self.confidence.shape != (n,):
            raise ParameterError("landmark arrays must share length: points (n,3), ids (n,), confidence (n,)")
        if n and (float(self.confidence.min()) < 0 or float(self.confidence.max()) > 1):
            raise ParameterError("landmark confidence must lie in [0, 1]")

    def __len__(self) -> int:
        return self.points.shape[0]

    def validate_against(self, model: BodyModel) -> None:
        if len(self) and (int(self.vertex_ids.min()) < 0 or int(self.vertex_ids.max()) >= model.n_vertices):
            raise ParameterError("landmark vertex_ids reference invalid vertices")


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 2000
    learning_rate: float = 1e-3
    lr_decay: float = 1.0  # multiplicative per-iteration decay; 1.0 = constant
    reg_weight_shape: float = 5e-5
    reg_weight_expression: float = 5e-5
    tolerance: float = 1e-9  # stop when the loss delta falls below this
    # Pose/expression can absorb shape detail that the frozen downstream rig
    # then discards; pin them when the targets are known to be at rest.
    optimize_pose: bool = True
    optimize_expression: bool = True

    def __post_init__(self):
        if min(self.max_iters, 1) < 1 or self.learning_rate <= 0 or self.tolerance < 0:
            raise ParameterError("FitConfig values must be positive")
        if not (0 < self.lr_decay <= 1):
            raise ParameterError("lr_decay must lie in (0, 1]")
        if self.reg_weight_shape < 0 or self.reg_weight_expression < 0:
            raise ParameterError("regularization weights must be nonnegative")


@dataclass
class FitResult:
    params: AvatarParams  # frozen at (beta*, theta_c, 0) for downstream stages
    optimized: AvatarParams  # the raw minimizer (beta*, theta*, psi*)
    final_loss: float
    iterations: int
    converged: bool
    loss_history: list[float] = field(default_factory=list)


def _smooth_abs(x: Tensor) -> Tensor:
    return torch.sqrt(x * x + L1_SMOOTH_EPS * L1_SMOOTH_EPS)


def fit_residual(model: BodyModel, params: AvatarParams, landmarks: LandmarkSet,
                 reg_weight_shape: float = 5e-5, reg_weight_expression: float = 5e-5) -> Tensor:
    """Confidence-weighted L1 distance between posed landmark vertices and
    targets, plus quadratic shape/expression regularization."""
    landmarks.validate_against(model)
    transforms = vertex_transforms(model, params)
    ids = landmarks.vertex_ids
    mats = transforms.matrices[ids]  # (n_e, 4, 4)
    t = model.template_vertices[ids]
    hom = torch.cat([t, torch.ones(len(landmarks), 1, dtype=t.dtype)], dim=1)
    posed = torch.einsum("eab,eb->ea", mats, hom)[:, :3]
    resid = _smooth_abs(posed - landmarks.points).sum(dim=1)
    data_term = (landmarks.confidence * resid).sum()
    reg = reg_weight_shape * (params.beta**2).sum() + reg_weight_expression * (params.psi**2).sum()
    return data_term + reg


def _check_degenerate(landmarks: LandmarkSet) -> None:
    if len(landmarks) < 4:
        raise FitError(f"need at least 4 landmarks, got {len(landmarks)}")
    pts = landmarks.points.detach().numpy()
    centered = pts - pts.mean(axis=0)
    rank = np.linalg.matrix_rank(centered, tol=1e-9)
    if rank < 2:
        raise FitError("landmarks are collinear; the fit is degenerate")


def fit_shape(model: BodyModel, landmarks: LandmarkSet, config: FitConfig = FitConfig()) -> FitResult:
    """Adam descent on :func:`fit_residual`; returns best-seen parameters.

    The returned ``params`` freeze pose at the canonical pose and expression
    at zero; ``optimized`` keeps the raw minimizer.
    """
    _check_degenerate(landmarks)
    landmarks.validate_against(model)

    beta = torch.zeros(model.n_shape, dtype=torch.float64, requires_grad=True)
    theta = model.theta_canonical.clone().requires_grad_(config.optimize_pose)
    psi = torch.zeros(model.n_expression, dtype=torch.float64, requires_grad=config.optimize_expression)
    free = [beta] + ([theta] if config.optimize_pose else []) + ([psi] if config.optimize_expression else [])
    opt = torch.optim.Adam(free, lr=config.learning_rate)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=config.lr_decay)

    best = (np.inf, None)
    history: list[float] = []
    prev = np.inf
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        opt.zero_grad()
        loss = fit_residual(
            model,
            AvatarParams(beta=beta, theta=theta, psi=psi),
            landmarks,
            config.reg_weight_shape,
            config.reg_weight_expression,
        )
        loss.backward()
        opt.step()
        if config.lr_decay < 1.0:
            sched.step()
        val = float(loss.detach())
        history.append(val)
        if val < best[0]:
            best = (val, (beta.detach().clone(), theta.detach().clone(), psi.detach().clone()))
        if abs(prev - val) < config.tolerance:
            converged = True
            break
        prev = val

    beta_b, theta_b, psi_b = best[1]
    frozen = AvatarParams(
        beta=beta_b, theta=model.theta_canonical.clone(), psi=torch.zeros_like(psi_b)
    )
    return FitResult(
        params=frozen,
        optimized=AvatarParams(beta=beta_b, theta=theta_b, psi=psi_b),
        final_loss=best[0],
        iterations=it,
        converged=converged,
        loss_history=history,
    )


def load_landmarks(path: str | Path, model: BodyModel) -> LandmarkSet:
    """Read a landmark JSON file: array of {index|name, xyz, confidence}.

    ``index`` refers to a slot in the model's correspondence table; ``name``
    looks the slot up through the model's landmark names.
    """
    try:
        entries = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(entries, list):
        raise LoadError(f"{path}: expected a JSON array of landmark entries")
    if model.landmark_vertex_ids is None:
        raise LoadError(f"{path}: model carries no landmark correspondence table")
    name_to_slot = {n: i for i, n in enumerate(model.landmark_names)}

    pts, ids, conf = [], [], []
    for k, e in enumerate(entries):
        if "xyz" not in e:
            raise LoadError(f"{path}: entry {k} missing 'xyz'")
        if "index" in e:
            slot = int(e["index"])
        elif "name" in e:
            if e["name"] not in name_to_slot:
                raise LoadError(f"{path}: entry {k} names unknown landmark {e['name']!r}")
            slot = name_to_slot[e["name"]]
        else:
            raise LoadError(f"{path}: entry {k} needs 'index' or 'name'")
        if not (0 <= slot < len(model.landmark_vertex_ids)):
            raise LoadError(f"{path}: entry {k} index {slot} outside correspondence table")
        pts.append([float(x) for x in e["xyz"]])
        ids.append(int(model.landmark_vertex_ids[slot]))
        conf.append(float(e.get("confidence", 1.0)))
    return LandmarkSet(
        points=torch.tensor(pts, dtype=torch.float64),
        vertex_ids=torch.tensor(ids, dtype=torch.int64),
        confidence=torch.tensor(conf, dtype=torch.float64),
    )


def save_landmarks(landmarks: LandmarkSet, path: str | Path, model: BodyModel | None = None) -> None:
    """Write landmarks as slot-indexed entries (requires the model table when
    vertex ids must be mapped back to slots)."""
    entries = []
    slot_of = {}
    if model is not None and model.landmark_vertex_ids is not None:
        slot_of = {int(v): i for i, v in enumerate(model.landmark_vertex_ids)}
    for i in range(len(landmarks)):
        vid = int(landmarks.vertex_ids[i])
        entries.append(
            {
                "index": slot_of.get(vid, i),
                "xyz": [float(x) for x in landmarks.points[i]],
                "confidence": float(landmarks.confidence[i]),
            }
        )
    Path(path).write_text(json.dumps(entries, indent=1))
