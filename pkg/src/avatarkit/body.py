"""Parametric body model: blendshapes, joint regression, linear blend skinning.

The model maps identity/pose/expression coefficients to a posed mesh through
per-vertex 4x4 affine transforms.  All math runs in float64 torch tensors and
is differentiable with respect to the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor

from .errors import ParameterError
from .mesh import Mesh

_EYE4 = torch.eye(4, dtype=torch.float64)


@dataclass(frozen=True)
class BodyModel:
    """Immutable template + bases bundle; all operations on it are pure.

    Shapes: ``template_vertices`` (n_v,3), ``shape_basis`` (n_v,3,n_beta),
    ``expression_basis`` (n_v,3,n_psi), ``pose_basis`` (n_v,3,9*(n_k-1)),
    ``joint_regressor`` (n_k,n_v), ``skin_weights`` (n_k,n_v) with columns
    summing to one, ``kinematic_parents`` (n_k,) with parent[0] == -1.
    """

    template_vertices: Tensor
    faces: Tensor
    shape_basis: Tensor
    expression_basis: Tensor
    pose_basis: Tensor
    joint_regressor: Tensor
    skin_weights: Tensor
    kinematic_parents: Tensor
    theta_canonical: Tensor
    uvs: Tensor | None = None
    landmark_vertex_ids: Tensor | None = None  # correspondence table kappa
    landmark_names: tuple[str, ...] = field(default=())

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def n_expression(self) -> int:
        return self.expression_basis.shape[2]

    @property
    def pose_feature_dim(self) -> int:
        return self.pose_basis.shape[2]

    def mesh(self) -> Mesh:
        return Mesh(vertices=self.template_vertices, faces=self.faces, uvs=self.uvs)

    def validate(self) -> None:
        n_v, n_k = self.n_vertices, self.n_joints
        if self.template_vertices.shape != (n_v, 3):
            raise ParameterError("template_vertices must be (n_v, 3)")
        if self.faces.numel() and (int(self.faces.min()) < 0 or int(self.faces.max()) >= n_v):
            raise ParameterError("faces index only valid vertices")
        if self.skin_weights.shape != (n_k, n_v):
            raise ParameterError(f"skin_weights must be ({n_k}, {n_v})")
        if float(self.skin_weights.min()) < 0:
            col = int((self.skin_weights < 0).any(dim=0).nonzero()[0, 0])
            raise ParameterError(f"skin_weights column {col} has negative entries")
        sums = self.skin_weights.sum(dim=0)
        bad = (sums - 1.0).abs() > 1e-6
        if bool(bad.any()):
            col = int(bad.nonzero()[0, 0])
            raise ParameterError(f"skin_weights column {col} sums to {float(sums[col]):.6g}")
        parents = self.kinematic_parents.tolist()
        if parents[0] != -1:
            raise ParameterError("kinematic_parents[0] must be -1 (single root)")
        for k, p in enumerate(parents[1:], start=1):
            if not (0 <= p < k):
                raise ParameterError(f"kinematic tree not topologically ordered at joint {k} (parent {p})")
        if self.pose_basis.shape[2] not in (0, 9 * (n_k - 1)):
            raise ParameterError("pose_basis last dim must be 0 or 9*(n_k-1)")
        if self.theta_canonical.shape != (3 * n_k + 3,):
            raise ParameterError(f"theta_canonical must have length {3 * n_k + 3}")
        if self.landmark_vertex_ids is not None:
            ids = self.landmark_vertex_ids
            if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= n_v):
                raise ParameterError("landmark_vertex_ids reference invalid vertices")


@dataclass(frozen=True)
class AvatarParams:
    """Shape/pose/expression coefficients: beta (n_beta,), theta (3*n_k+3,), psi (n_psi,).

    theta holds one axis-angle per joint (root first) followed by a global
    translation triple.
    """

    beta: Tensor
    theta: Tensor
    psi: Tensor

    @staticmethod
    def zeros(model: BodyModel) -> "AvatarParams":
        return AvatarParams(
            beta=torch.zeros(model.n_shape, dtype=torch.float64),
            theta=model.theta_canonical.clone(),
            psi=torch.zeros(model.n_expression, dtype=torch.float64),
        )

    def validate(self, model: BodyModel) -> None:
        if self.beta.shape != (model.n_shape,):
            raise ParameterError(f"beta must have length {model.n_shape}, got {tuple(self.beta.shape)}")
        if self.theta.shape != (3 * model.n_joints + 3,):
            raise ParameterError(
                f"theta must have length {3 * model.n_joints + 3}, got {tuple(self.theta.shape)}"
            )
        if self.psi.shape != (model.n_expression,):
            raise ParameterError(f"psi must have length {model.n_expression}, got {tuple(self.psi.shape)}")
        for name, t in (("beta", self.beta), ("theta", self.theta), ("psi", self.psi)):
            if not bool(torch.isfinite(t).all()):
                raise ParameterError(f"{name} contains non-finite values")

    def joint_rotations(self, model: BodyModel) -> Tensor:
        return self.theta[: 3 * model.n_joints].reshape(model.n_joints, 3)

    def translation(self, model: BodyModel) -> Tensor:
        return self.theta[3 * model.n_joints :]


@dataclass(frozen=True)
class VertexTransforms:
    """Per-vertex 4x4 affines; bottom row (0,0,0,1), each matrix invertible."""

    matrices: Tensor  # (n_v, 4, 4)

    def apply(self, points: Tensor) -> Tensor:
        """Apply the i-th matrix to the i-th point; points (n_v, 3)."""
        hom = torch.cat([points, torch.ones(points.shape[0], 1, dtype=points.dtype)], dim=1)
        out = torch.einsum("vab,vb->va", self.matrices, hom)
        return out[:, :3]


def rodrigues(axis_angle: Tensor) -> Tensor:
    """Axis-angle vectors (..., 3) to rotation matrices (..., 3, 3)."""
    angle = torch.linalg.norm(axis_angle, dim=-1, keepdim=True)
    # Guard the 0/0 at zero angle; the small-angle branch ignores `axis`.
    axis = axis_angle / torch.clamp(angle, min=1e-30)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = torch.zeros_like(x)
    k = torch.stack(
        [
            torch.stack([zero, -z, y], dim=-1),
            torch.stack([z, zero, -x], dim=-1),
            torch.stack([-y, x, zero], dim=-1),
        ],
        dim=-2,
    )
    eye = torch.eye(3, dtype=axis_angle.dtype).expand(k.shape)
    a = angle[..., None]
    full = eye + torch.sin(a) * k + (1.0 - torch.cos(a)) * (k @ k)
    # Second-order Taylor expansion keeps gradients finite through angle -> 0.
    k_raw = k * torch.clamp(angle, min=1e-30)[..., None]
    small = eye + k_raw + 0.5 * (k_raw @ k_raw)
    return torch.where(a > 1e-8, full, small)


def pose_feature(model: BodyModel, theta: Tensor) -> Tensor:
    """Flattened (rotation - identity) per non-root joint; drives pose correctives."""
    rots = rodrigues(theta[: 3 * model.n_joints].reshape(model.n_joints, 3))
    eye = torch.eye(3, dtype=theta.dtype)
    return (rots[1:] - eye).reshape(-1)


def blendshape_offsets(model: BodyModel, params: AvatarParams) -> Tensor:
    """Total per-vertex template deformation from shape, expression, and pose."""
    out = torch.einsum("vci,i->vc", model.shape_basis, params.beta)
    out = out + torch.einsum("vci,i->vc", model.expression_basis, params.psi)
    if model.pose_basis.shape[2]:
        out = out + torch.einsum("vci,i->vc", model.pose_basis, pose_feature(model, params.theta))
    return out


def shaped_template(model: BodyModel, beta: Tensor) -> Tensor:
    """Template plus shape blendshape offsets only (the joint-regression input)."""
    if beta.shape != (model.n_shape,):
        raise ParameterError(f"beta must have length {model.n_shape}, got {tuple(beta.shape)}")
    return model.template_vertices + torch.einsum("vci,i->vc", model.shape_basis, beta)


def joint_positions(model: BodyModel, beta: Tensor) -> Tensor:
    """Joint regressor applied to the beta-shaped template; (n_k, 3)."""
    return model.joint_regressor @ shaped_template(model, beta)


def _make44(rot: Tensor, transl: Tensor) -> Tensor:
    """Stack (..., 3, 3) rotation and (..., 3) translation into (..., 4, 4)."""
    batch = rot.shape[:-2]
    out = _EYE4.to(rot.dtype).expand(*batch, 4, 4).clone()
    out[..., :3, :3] = rot
    out[..., :3, 3] = transl
    return out


def joint_world_transforms(model: BodyModel, params: AvatarParams) -> Tensor:
    """Relative world transform G_k per joint, composed along the kinematic chain.

    G_k maps rest-space points rigidly attached to joint k into posed space;
    at the canonical pose every G_k is the identity.  The global translation
    component of theta pre-multiplies all joints.
    """
    params.validate(model)
    joints = joint_positions(model, params.beta)
    rots = rodrigues(params.joint_rotations(model))
    parents = model.kinematic_parents.tolist()

    world = [None] * model.n_joints
    world[0] = _make44(rots[0], joints[0])
    for k in range(1, model.n_joints):
        local = _make44(rots[k], joints[k] - joints[parents[k]])
        world[k] = world[parents[k]] @ local
    world_t = torch.stack(world)

    # Subtract each joint's rest location: G_k = A_k @ [[I, -j_k], [0, 1]].
    rest_inv = _make44(torch.eye(3, dtype=joints.dtype).expand(model.n_joints, 3, 3), -joints)
    rel = world_t @ rest_inv
    transl = _make44(torch.eye(3, dtype=joints.dtype), params.translation(model))
    return transl.unsqueeze(0) @ rel


def vertex_transforms(model: BodyModel, params: AvatarParams) -> VertexTransforms:
    """Per-vertex affine M_i: skin-weight blend of joint transforms composed
    with the blendshape translation of vertex i."""
    g = joint_world_transforms(model, params)  # (n_k, 4, 4)
    blended = torch.einsum("kv,kab->vab", model.skin_weights.to(g.dtype), g)
    # Weight columns sum to 1 only within tolerance; make the affine bottom row exact.
    bottom = torch.tensor([0.0, 0.0, 0.0, 1.0], dtype=g.dtype).expand(model.n_vertices, 4)
    blended = torch.cat([blended[:, :3, :], bottom.unsqueeze(1)], dim=1)
    offsets = blendshape_offsets(model, params)
    shift = _EYE4.to(g.dtype).expand(model.n_vertices, 4, 4).clone()
    shift[:, :3, 3] = offsets
    return VertexTransforms(matrices=blended @ shift)


def skin_mesh(model: BodyModel, params: AvatarParams) -> Mesh:
    """Pose the template: v_i = (M_i @ [t_i; 1]).xyz."""
    transforms = vertex_transforms(model, params)
    posed = transforms.apply(model.template_vertices)
    return Mesh(vertices=posed, faces=model.faces, uvs=model.uvs)
