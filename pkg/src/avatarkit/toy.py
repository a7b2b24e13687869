"""Synthetic desk-scale body models for tests and demos.

The licensed full-scale model cannot be redistributed, so every test runs on
procedurally generated stand-ins: a jointed cylinder and a two-joint sphere
head.  Both live inside the canonical [-1, 1]^3 box and carry UVs, smooth
random blendshape bases, and a landmark correspondence table.
"""

from __future__ import annotations

import numpy as np
import torch

from .body import BodyModel


def _smooth_basis(rng: np.random.Generator, verts: np.ndarray, n_modes: int, scale: float) -> np.ndarray:
    """Low-frequency sinusoidal displacement fields; (n_v, 3, n_modes)."""
    n_v = verts.shape[0]
    basis = np.zeros((n_v, 3, n_modes))
    for m in range(n_modes):
        freq = rng.uniform(0.5, 2.5, size=3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        wave = np.sin(verts @ freq + phase[0]) + 0.5 * np.cos(verts @ freq[::-1].copy() + phase[1])
        basis[:, :, m] = scale * wave[:, None] * direction[None, :]
    return basis


def _soft_skin_weights(verts: np.ndarray, joints: np.ndarray, sharpness: float = 40.0) -> np.ndarray:
    """Distance-softmax weights, (n_k, n_v), columns summing to one."""
    d2 = ((verts[None, :, :] - joints[:, None, :]) ** 2).sum(axis=2)
    logits = -sharpness * d2
    logits -= logits.max(axis=0, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=0, keepdims=True)


def _ring_regressor(verts: np.ndarray, joints: np.ndarray) -> np.ndarray:
    """Joint regressor averaging the vertices nearest each joint; rows sum to one."""
    n_k = joints.shape[0]
    reg = np.zeros((n_k, verts.shape[0]))
    for k in range(n_k):
        d = np.linalg.norm(verts - joints[k], axis=1)
        nearest = np.argsort(d)[: max(8, verts.shape[0] // (4 * n_k))]
        reg[k, nearest] = 1.0 / len(nearest)
    return reg


def _finish(
    verts: np.ndarray,
    faces: np.ndarray,
    uvs: np.ndarray,
    joints: np.ndarray,
    parents: list[int],
    n_shape: int,
    n_expression: int,
    seed: int,
    pose_basis_scale: float,
    landmark_count: int = 0,
) -> BodyModel:
    rng = np.random.default_rng(seed)
    n_k = joints.shape[0]
    shape_basis = _smooth_basis(rng, verts, n_shape, scale=0.03)
    expr_basis = _smooth_basis(rng, verts, n_expression, scale=0.015)
    pose_dim = 9 * (n_k - 1)
    if pose_basis_scale > 0 and pose_dim > 0:
        pose_basis = _smooth_basis(rng, verts, pose_dim, scale=pose_basis_scale)
    else:
        pose_basis = np.zeros((verts.shape[0], 3, pose_dim))

    landmark_ids: np.ndarray | None = None
    names: tuple[str, ...] = ()
    if landmark_count:
        front = np.argsort(-verts[:, 2])  # largest z first: the "face" side
        landmark_ids = np.sort(front[:landmark_count]).astype(np.int64)
        names = tuple(f"landmark_{i:02d}" for i in range(landmark_count))

    model = BodyModel(
        template_vertices=torch.from_numpy(verts),
        faces=torch.from_numpy(faces.astype(np.int64)),
        shape_basis=torch.from_numpy(shape_basis),
        expression_basis=torch.from_numpy(expr_basis),
        pose_basis=torch.from_numpy(pose_basis),
        joint_regressor=torch.from_numpy(_ring_regressor(verts, joints)),
        skin_weights=torch.from_numpy(_soft_skin_weights(verts, joints)),
        kinematic_parents=torch.tensor(parents, dtype=torch.int64),
        theta_canonical=torch.zeros(3 * n_k + 3, dtype=torch.float64),
        uvs=torch.from_numpy(uvs),
        landmark_vertex_ids=torch.from_numpy(landmark_ids) if landmark_ids is not None else None,
        landmark_names=names,
    )
    model.validate()
    return model


def cylinder_model(
    n_segments: int = 16,
    n_rings: int = 9,
    n_joints: int = 3,
    n_shape: int = 20,
    n_expression: int = 5,
    seed: int = 0,
    radius: float = 0.25,
    height: float = 1.2,
    pose_basis_scale: float = 0.005,
) -> BodyModel:
    """Jointed cylinder along +y with a duplicated UV seam column."""
    cols = n_segments + 1
    ys = np.linspace(-height / 2, height / 2, n_rings)
    angles = np.linspace(0.0, 2 * np.pi, cols)
    verts = np.zeros((n_rings * cols, 3))
    uvs = np.zeros((n_rings * cols, 2))
    for r, y in enumerate(ys):
        for c, a in enumerate(angles):
            i = r * cols + c
            verts[i] = (radius * np.sin(a), y, radius * np.cos(a))
            uvs[i] = (c / n_segments, r / (n_rings - 1))
    faces = []
    for r in range(n_rings - 1):
        for c in range(n_segments):
            i0 = r * cols + c
            i1 = i0 + 1
            i2 = i0 + cols
            i3 = i2 + 1
            faces.append((i0, i2, i1))
            faces.append((i1, i2, i3))
    joints = np.stack(
        [np.array([0.0, y, 0.0]) for y in np.linspace(-height / 2, height / 2, n_joints)]
    )
    parents = [-1] + list(range(n_joints - 1))
    return _finish(
        verts,
        np.asarray(faces),
        uvs,
        joints,
        parents,
        n_shape,
        n_expression,
        seed,
        pose_basis_scale,
        landmark_count=min(68, n_rings * cols // 2),
    )


def head_model(
    n_lat: int = 17,
    n_lon: int = 24,
    n_shape: int = 20,
    n_expression: int = 8,
    seed: int = 0,
    radius: float = 0.35,
    pose_basis_scale: float = 0.0,
) -> BodyModel:
    """UV-sphere head with a root joint at the neck and a head joint at center.

    The front of the head faces +z; the mesh fits well inside the canonical
    [-1, 1]^3 rendering box.
    """
    cols = n_lon + 1
    verts = []
    uvs = []
    for i in range(n_lat):
        v = i / (n_lat - 1)
        polar = np.pi * v  # 0 at +y pole
        for j in range(cols):
            u = j / n_lon
            az = 2 * np.pi * u - np.pi  # seam at the back (-z)
            x = radius * np.sin(polar) * np.sin(az)
            y = radius * np.cos(polar)
            z = radius * np.sin(polar) * np.cos(az)
            verts.append((x, y, z))
            uvs.append((u, 1.0 - v))
    verts = np.asarray(verts)
    uvs = np.asarray(uvs)
    faces = []
    for i in range(n_lat - 1):
        for j in range(n_lon):
            a = i * cols + j
            b = a + 1
            c = a + cols
            d = c + 1
            if i > 0:
                faces.append((a, c, b))
            if i < n_lat - 2:
                faces.append((b, c, d))
    joints = np.array([[0.0, -radius, 0.0], [0.0, 0.0, 0.0]])
    parents = [-1, 0]
    return _finish(
        verts,
        np.asarray(faces),
        uvs,
        joints,
        parents,
        n_shape,
        n_expression,
        seed,
        pose_basis_scale,
        landmark_count=68,
    )
