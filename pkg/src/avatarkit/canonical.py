"""Observation-to-canonical point mapping for posed avatars.

A radiance component lives in the canonical space built around the template
at the canonical pose.  Sample points in posed (observation) space map back
through a Gaussian-weighted blend of per-vertex inverse skinning transforms;
the weights combine Euclidean distance with skin-weight-column distance so
points follow the body part they sit on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial import cKDTree

from .body import AvatarParams, BodyModel, VertexTransforms, skin_mesh, vertex_transforms
from .errors import ParameterError
from .mesh import Mesh

DEFAULT_NEIGHBORS = 6
DEFAULT_TAU = 0.1  # kernel bandwidth; 0.2 matches the alternative published value
DEFAULT_CUTOFF = 0.5  # beyond this distance from the mesh a point is empty space


@dataclass(frozen=True)
class CanonicalFrame:
    """Kernel constants plus (optionally) the body model the kernel reads
    skin-weight columns from."""

    n_neighbors: int = DEFAULT_NEIGHBORS
    tau: float = DEFAULT_TAU
    cutoff: float = DEFAULT_CUTOFF
    model: BodyModel | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.n_neighbors < 1 or self.tau <= 0 or self.cutoff <= 0:
            raise ParameterError("CanonicalFrame needs positive neighbor count, tau, cutoff")

    def to_json(self) -> dict:
        return {"n_neighbors": self.n_neighbors, "tau": self.tau, "cutoff": self.cutoff}

    @staticmethod
    def from_json(data: dict, model: BodyModel | None = None) -> "CanonicalFrame":
        return CanonicalFrame(
            n_neighbors=int(data.get("n_neighbors", DEFAULT_NEIGHBORS)),
            tau=float(data.get("tau", DEFAULT_TAU)),
            cutoff=float(data.get("cutoff", DEFAULT_CUTOFF)),
            model=model,
        )


def _blend_weights(dist: np.ndarray, idx: np.ndarray, skin_cols: np.ndarray, tau: float) -> np.ndarray:
    """Gaussian neighbor weights; (N, K) rows summing to one.

    The kernel argument is the product of the Euclidean distance to the
    neighbor and the distance between skin-weight columns of the neighbor
    and of the single nearest vertex.
    """
    xi = idx[:, 0]
    w_xi = skin_cols[xi]  # (N, n_k)
    w_nb = skin_cols[idx]  # (N, K, n_k)
    wdist = np.linalg.norm(w_xi[:, None, :] - w_nb, axis=2)
    logits = -(dist * wdist) / (2.0 * tau * tau)
    logits -= logits.max(axis=1, keepdims=True)
    om = np.exp(logits)
    return om / om.sum(axis=1, keepdims=True)


def _warp_points(points: np.ndarray, weights: np.ndarray, warps: np.ndarray) -> np.ndarray:
    hom = np.concatenate([points, np.ones((len(points), 1))], axis=1)
    return np.einsum("nk,nkab,nb->na", weights, warps, hom)[:, :3]


class CanonicalMap:
    """Precomputed canonicalization for one (model, params) pair.

    The per-vertex warp A_i = M_i(0, theta_c, 0) @ M_i(beta, theta, psi)^-1
    and the KD-tree over posed vertices are built once; mapping batches of
    sample points is then cheap.
    """

    def __init__(self, model: BodyModel, params: AvatarParams, frame: CanonicalFrame = CanonicalFrame()):
        params.validate(model)
        self.frame = frame
        self.model = model
        self.params = params
        self.posed: Mesh = skin_mesh(model, params)
        obs = vertex_transforms(model, params).matrices
        canon = vertex_transforms(model, AvatarParams.zeros(model)).matrices
        self._warp = (canon @ torch.linalg.inv(obs)).numpy()  # (n_v, 4, 4)
        self._tree = cKDTree(self.posed.vertices.detach().numpy())
        self._skin_cols = model.skin_weights.numpy().T.copy()  # (n_v, n_k)
        self._k = min(frame.n_neighbors, model.n_vertices)

    def map_points(
        self, points: np.ndarray, directions: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
        """Map (N, 3) observation points to canonical space.

        Returns (canonical points, canonical directions or None, inside
        mask).  Points beyond the cutoff lie outside the influence region;
        callers treat them as empty space.
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        dist, idx = self._tree.query(points, k=self._k)
        if self._k == 1:
            dist = dist[:, None]
            idx = idx[:, None]
        inside = dist[:, 0] <= self.frame.cutoff

        weights = _blend_weights(dist, idx, self._skin_cols, self.frame.tau)
        canonical = _warp_points(points, weights, self._warp[idx])

        canon_dirs = None
        if directions is not None:
            directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
            rot = self._warp[idx[:, 0], :3, :3]  # nearest-vertex rotation block
            canon_dirs = np.einsum("nab,nb->na", rot, directions)
            norms = np.linalg.norm(canon_dirs, axis=1, keepdims=True)
            canon_dirs = canon_dirs / np.clip(norms, 1e-30, None)
        return canonical, canon_dirs, inside


def canonicalize(
    x,
    posed_mesh: Mesh,
    transforms: VertexTransforms,
    canon_transforms: VertexTransforms,
    frame: CanonicalFrame,
):
    """Map a single observation-space point to canonical space.

    ``posed_mesh`` and ``transforms`` must come from the same parameters;
    ``canon_transforms`` are the vertex transforms at the canonical pose.
    Returns the canonical point, or None when x lies farther than the
    frame's cutoff from the posed mesh (outside the influence region).
    """
    if frame.model is None:
        raise ParameterError("canonicalize needs frame.model for skin-weight distances")
    x = np.asarray(x, dtype=np.float64).reshape(1, 3)
    verts = posed_mesh.vertices.detach().numpy()
    k = min(frame.n_neighbors, len(verts))
    dist, idx = cKDTree(verts).query(x, k=k)
    dist = dist.reshape(1, -1)
    idx = idx.reshape(1, -1)
    if dist[0, 0] > frame.cutoff:
        return None

    warp_all = (canon_transforms.matrices @ torch.linalg.inv(transforms.matrices)).numpy()
    skin_cols = frame.model.skin_weights.numpy().T
    weights = _blend_weights(dist, idx, skin_cols, frame.tau)
    return _warp_points(x, weights, warp_all[idx])[0]
