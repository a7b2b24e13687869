"""First-hit ray/mesh intersection through a BVH.

Traversal is batched: a work queue of (ray, node) pairs expands through the
tree while Moller-Trumbore runs on (ray, triangle) pairs at the leaves.
Equal-depth hits break ties toward the lowest face index, so results are
independent of traversal order and match a brute-force scan exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh

DET_EPS = 1e-12  # rays parallel to a triangle's plane count as misses
T_MIN = 1e-9  # hits must have strictly positive depth


@dataclass
class RayHits:
    """Per-ray nearest intersection; missing rays have hit=False, face=-1."""

    hit: np.ndarray  # (n,) bool
    t: np.ndarray  # (n,) float64, inf where missed
    face: np.ndarray  # (n,) int64, -1 where missed
    bary: np.ndarray  # (n, 3) float64 barycentric (w0, w1, w2)


def _moller_trumbore(orig, direc, v0, v1, v2, t_min=T_MIN):
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(direc, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > DET_EPS
    inv = np.where(ok, det, 1.0) ** -1
    s = orig - v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", direc, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    ok &= (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > t_min)
    return ok, t, u, v


class TriangleBVH:
    """Median-split BVH over a triangle soup; immutable after build."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, leaf_size: int = 4):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        tri = self.vertices[self.faces]  # (n_t, 3, 3)
        self._tri = tri
        lo = tri.min(axis=1)
        hi = tri.max(axis=1)
        centroids = tri.mean(axis=1)

        n_t = len(self.faces)
        order = np.arange(n_t)
        bounds_min, bounds_max = [], []
        left, right = [], []
        start, count = [], []

        stack = [(0, n_t, -1, False)]  # (lo_idx, hi_idx, parent, is_right)
        while stack:
            a, b, parent, is_right = stack.pop()
            idx = order[a:b]
            node = len(bounds_min)
            bounds_min.append(lo[idx].min(axis=0))
            bounds_max.append(hi[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            if parent >= 0:
                (right if is_right else left)[parent] = node
            if b - a <= leaf_size:
                start.append(a)
                count.append(b - a)
                continue
            start.append(-1)
            count.append(0)
            c = centroids[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = (b - a) // 2
            part = np.argpartition(c[:, axis], mid)
            order[a:b] = idx[part]
            stack.append((a + mid, b, node, True))
            stack.append((a, a + mid, node, False))

        self.bounds_min = np.asarray(bounds_min)
        self.bounds_max = np.asarray(bounds_max)
        self.left = np.asarray(left)
        self.right = np.asarray(right)
        self.start = np.asarray(start)
        self.count = np.asarray(count)
        self.order = order

    def intersect_first(self, origins: np.ndarray, directions: np.ndarray) -> RayHits:
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        n = len(origins)
        best_t = np.full(n, np.inf)
        best_face = np.full(n, -1, dtype=np.int64)
        best_uv = np.zeros((n, 2))
        if len(self.faces) == 0:
            return RayHits(hit=best_face >= 0, t=best_t, face=best_face, bary=np.zeros((n, 3)))

        with np.errstate(divide="ignore", invalid="ignore"):
            inv_d = 1.0 / directions

        rays = np.arange(n)
        nodes = np.zeros(n, dtype=np.int64)
        keep = self._box_hits(rays, nodes, origins, inv_d, best_t)
        rays, nodes = rays[keep], nodes[keep]

        while len(rays):
            is_leaf = self.start[nodes] >= 0
            # Leaves: run triangle tests on every (ray, triangle) pair.
            if np.any(is_leaf):
                lr, ln = rays[is_leaf], nodes[is_leaf]
                counts = self.count[ln]
                rep_rays = np.repeat(lr, counts)
                ends = np.cumsum(counts)
                offsets = np.arange(int(ends[-1])) - np.repeat(ends - counts, counts)
                slots = np.repeat(self.start[ln], counts) + offsets
                tri_ids = self.order[slots]
                tri = self._tri[tri_ids]
                ok, t, u, v = _moller_trumbore(
                    origins[rep_rays], directions[rep_rays], tri[:, 0], tri[:, 1], tri[:, 2]
                )
                if np.any(ok):
                    self._update_best(
                        rep_rays[ok], t[ok], tri_ids[ok], u[ok], v[ok], best_t, best_face, best_uv
                    )
            # Internal nodes: push children whose slabs beat the current best.
            inner = ~is_leaf
            ir, inn = rays[inner], nodes[inner]
            next_rays, next_nodes = [], []
            for child in (self.left[inn], self.right[inn]):
                keep = self._box_hits(ir, child, origins, inv_d, best_t)
                next_rays.append(ir[keep])
                next_nodes.append(child[keep])
            rays = np.concatenate(next_rays) if next_rays else np.array([], dtype=np.int64)
            nodes = np.concatenate(next_nodes) if next_nodes else np.array([], dtype=np.int64)

        hit = best_face >= 0
        bary = np.zeros((n, 3))
        bary[hit, 1] = best_uv[hit, 0]
        bary[hit, 2] = best_uv[hit, 1]
        bary[hit, 0] = 1.0 - best_uv[hit, 0] - best_uv[hit, 1]
        return RayHits(hit=hit, t=best_t, face=best_face, bary=bary)

    def _box_hits(self, rays, nodes, origins, inv_d, best_t):
        # Slab test; 0 * inf produces NaN when a parallel ray starts exactly
        # on a slab plane, which counts as an unconstrained axis.
        with np.errstate(invalid="ignore"):
            lo = (self.bounds_min[nodes] - origins[rays]) * inv_d[rays]
            hi = (self.bounds_max[nodes] - origins[rays]) * inv_d[rays]
        axis_lo = np.fmin(lo, hi)  # fmin/fmax drop single NaNs
        axis_hi = np.fmax(lo, hi)
        axis_lo = np.where(np.isnan(axis_lo), -np.inf, axis_lo)
        axis_hi = np.where(np.isnan(axis_hi), np.inf, axis_hi)
        t0 = axis_lo.max(axis=1)
        t1 = axis_hi.min(axis=1)
        # Keep ties (t0 == best) so equal-depth hits can still lower the face index.
        return (t1 >= np.maximum(t0, 0.0)) & (t0 <= best_t[rays])

    @staticmethod
    def _update_best(rays, t, faces, u, v, best_t, best_face, best_uv):
        # Lexicographic minimum per ray on (t, face): sort then keep first.
        order = np.lexsort((faces, t, rays))
        rays, t, faces, u, v = rays[order], t[order], faces[order], u[order], v[order]
        first = np.ones(len(rays), dtype=bool)
        first[1:] = rays[1:] != rays[:-1]
        rays, t, faces, u, v = rays[first], t[first], faces[first], u[first], v[first]
        better = (t < best_t[rays]) | ((t == best_t[rays]) & (faces < best_face[rays]))
        rays, t, faces, u, v = rays[better], t[better], faces[better], u[better], v[better]
        best_t[rays] = t
        best_face[rays] = faces
        best_uv[rays, 0] = u
        best_uv[rays, 1] = v


def build_bvh(mesh: Mesh) -> TriangleBVH:
    return TriangleBVH(mesh.vertices.detach().numpy(), mesh.faces.numpy())


def intersect_first(origin, direction, mesh: Mesh, bvh: TriangleBVH | None = None):
    """Nearest positive-depth hit of one ray; returns None on a miss.

    Result dict carries depth ``t``, ``face`` index, and barycentric weights
    ``bary`` for the face's three corners.
    """
    bvh = bvh or build_bvh(mesh)
    o = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    d = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    hits = bvh.intersect_first(o, d)
    if not hits.hit[0]:
        return None
    return {"t": float(hits.t[0]), "face": int(hits.face[0]), "bary": hits.bary[0]}
