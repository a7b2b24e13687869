import numpy as np
import pytest
import torch

from avatarkit import toy
from avatarkit.camera import Camera
from avatarkit.mesh import Mesh
from avatarkit.raycast import _moller_trumbore, build_bvh, intersect_first


def unit_triangle():
    return Mesh(
        vertices=torch.tensor([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=torch.float64),
        faces=torch.tensor([[0, 1, 2]], dtype=torch.int64),
    )


def brute_force_first(origins, directions, tri):
    """Independent all-triangle loop with the same epsilon policy."""
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_f = np.full(n, -1, dtype=np.int64)
    best_uv = np.zeros((n, 2))
    for f in range(len(tri)):
        v0 = np.broadcast_to(tri[f, 0], origins.shape)
        v1 = np.broadcast_to(tri[f, 1], origins.shape)
        v2 = np.broadcast_to(tri[f, 2], origins.shape)
        ok, t, u, v = _moller_trumbore(origins, directions, v0, v1, v2)
        upd = ok & ((t < best_t) | ((t == best_t) & (f < best_f)))
        best_t[upd] = t[upd]
        best_f[upd] = f
        best_uv[upd, 0] = u[upd]
        best_uv[upd, 1] = v[upd]
    return best_t, best_f, best_uv


def test_centroid_hit_exact():
    hit = intersect_first([1 / 3, 1 / 3, 5.0], [0.0, 0.0, -1.0], unit_triangle())
    assert hit is not None
    assert hit["t"] == pytest.approx(5.0, abs=1e-12)
    assert hit["face"] == 0
    np.testing.assert_allclose(hit["bary"], [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_grazing_parallel_ray_misses():
    # Direction lies in the triangle's plane (z = 0).
    assert intersect_first([0.2, 0.2, 0.0], [1.0, 0.0, 0.0], unit_triangle()) is None
    # And a ray in a parallel plane above it.
    assert intersect_first([0.2, 0.2, 0.5], [1.0, 0.0, 0.0], unit_triangle()) is None


def test_behind_origin_misses():
    assert intersect_first([0.2, 0.2, -1.0], [0.0, 0.0, -1.0], unit_triangle()) is None


def test_nearest_of_two_layers():
    mesh = Mesh(
        vertices=torch.tensor(
            [
                [0, 0, 0], [1, 0, 0], [0, 1, 0],
                [0, 0, -1], [1, 0, -1], [0, 1, -1],
            ],
            dtype=torch.float64,
        ),
        faces=torch.tensor([[0, 1, 2], [3, 4, 5]], dtype=torch.int64),
    )
    hit = intersect_first([0.2, 0.2, 3.0], [0.0, 0.0, -1.0], mesh)
    assert hit["face"] == 0 and hit["t"] == pytest.approx(3.0)


def test_tie_breaks_to_lowest_face_index():
    # Two coincident triangles; the lower face index must win.
    v = torch.tensor([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=torch.float64)
    mesh = Mesh(vertices=v, faces=torch.tensor([[0, 1, 2], [0, 1, 2]], dtype=torch.int64))
    hit = intersect_first([0.2, 0.2, 1.0], [0.0, 0.0, -1.0], mesh)
    assert hit["face"] == 0
    mesh2 = Mesh(vertices=v, faces=torch.tensor([[0, 2, 1], [0, 1, 2]], dtype=torch.int64))
    hit2 = intersect_first([0.2, 0.2, 1.0], [0.0, 0.0, -1.0], mesh2)
    assert hit2["face"] == 0


@pytest.mark.parametrize("seed", [0, 1])
def test_bvh_matches_brute_force_on_500_face_mesh(seed):
    model = toy.head_model(n_lat=15, n_lon=20, seed=seed)
    mesh = model.mesh()
    assert mesh.n_faces >= 500
    bvh = build_bvh(mesh)
    rng = np.random.default_rng(seed)
    n = 5000
    origins = rng.uniform(-2.0, 2.0, size=(n, 3))
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    hits = bvh.intersect_first(origins, directions)
    tri = mesh.vertices.numpy()[mesh.faces.numpy()]
    bt, bf, buv = brute_force_first(origins, directions, tri)
    np.testing.assert_array_equal(hits.face, bf)
    both = np.where(np.isinf(bt), 0.0, bt)
    ours = np.where(np.isinf(hits.t), 0.0, hits.t)
    np.testing.assert_array_equal(ours, both)
    np.testing.assert_array_equal(hits.bary[:, 1:][hits.hit], buv[hits.hit])


def test_camera_rays_hit_head_silhouette():
    model = toy.head_model()
    bvh = build_bvh(model.mesh())
    cam = Camera(width=64, height=64, distance=2.0)
    o, d = cam.rays()
    hits = bvh.intersect_first(o, d)
    frac = hits.hit.mean()
    assert 0.05 < frac < 0.5  # the head occupies a plausible part of the frame
    # Center pixel looks at the face; its depth is distance - radius.
    center = 32 * 64 + 32
    assert hits.hit[center]
    # Polyhedral sphere faces sit slightly inside the true sphere.
    assert hits.t[center] == pytest.approx(2.0 - 0.35, abs=0.01)
