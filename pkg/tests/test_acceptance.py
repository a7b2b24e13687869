"""Acceptance criteria, one test per criterion, each printing PASS/FAIL.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  Tolerances are fixed here, not calibrated elsewhere.
"""

import contextlib
import math
import time

import numpy as np
import torch

from avatarkit import toy
from avatarkit.body import AvatarParams, joint_positions, rodrigues, skin_mesh
from avatarkit.camera import Camera
from avatarkit.canonical import CanonicalMap
from avatarkit.compose import AvatarRig, attach, detach, render_avatar
from avatarkit.field import FieldConfig, RadianceField
from avatarkit.landmarks import FitConfig, LandmarkSet, fit_shape
from avatarkit.losses import (
    LossWeights,
    mask_loss,
    sds_gradient,
    similarity_loss,
    sparsity_loss,
)
from avatarkit.oracle import SyntheticOracle, linear_critic, perfect_critic
from avatarkit.procedural import ShellGuidance, ShellSpec
from avatarkit.texture import TextureMap, raster_geometry, rasterize, sample_texture
from avatarkit.training import CameraDistribution, TrainConfig, train_component
from avatarkit.volume import RaySamples, compute_alphas, render_image


@contextlib.contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL  {name}", flush=True)
        raise
    print(f"ACCEPTANCE PASS  {name}", flush=True)


def toy_cylinder():
    return toy.cylinder_model(n_joints=3, seed=1)


def toy_head():
    return toy.head_model(n_lat=13, n_lon=18)


# ---------------------------------------------------------------------------
# Body model
# ---------------------------------------------------------------------------

def test_rest_pose_identity():
    with criterion("rest-pose identity (< 1e-9, < 1 s)"):
        model = toy_cylinder()
        start = time.perf_counter()
        posed = skin_mesh(model, AvatarParams.zeros(model))
        elapsed = time.perf_counter() - start
        err = float((posed.vertices - model.template_vertices).abs().max())
        assert err < 1e-9, f"max abs error {err}"
        assert elapsed < 1.0, f"took {elapsed:.3f}s"


def test_lbs_matches_naive_oracle():
    with criterion("LBS vs naive forward-kinematics oracle (100 draws, 1e-9)"):
        from test_body import naive_skin

        model = toy_cylinder()
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            beta = rng.normal(size=model.n_shape) * 0.5
            theta = rng.normal(size=3 * model.n_joints + 3) * 0.5
            psi = rng.normal(size=model.n_expression) * 0.5
            ours = skin_mesh(
                model,
                AvatarParams(
                    beta=torch.from_numpy(beta),
                    theta=torch.from_numpy(theta),
                    psi=torch.from_numpy(psi),
                ),
            ).vertices.numpy()
            expected = naive_skin(model, beta, theta, psi)
            worst = max(worst, float(np.abs(ours - expected).max()))
        assert worst < 1e-9, f"worst deviation {worst}"


# ---------------------------------------------------------------------------
# Volume rendering
# ---------------------------------------------------------------------------

def test_volume_rendering_identities():
    with criterion("telescoping identity over 1000 rays + constant-density closed form (1e-6)"):
        gen = torch.Generator().manual_seed(0)
        o = torch.randn(1000, 3, generator=gen, dtype=torch.float64)
        d = torch.randn(1000, 3, generator=gen, dtype=torch.float64)
        d = d / d.norm(dim=1, keepdim=True)
        samples = RaySamples.stratified(o, d, -1.0, 1.0, 64, gen)
        sigma = torch.rand(1000, 64, generator=gen, dtype=torch.float64) * 8
        alphas = compute_alphas(sigma, samples.deltas)
        gap = (alphas.sum(dim=1) - (1 - torch.exp(-(sigma * samples.deltas).sum(dim=1)))).abs().max()
        assert float(gap) < 1e-6, f"telescoping gap {float(gap)}"

        uniform = RaySamples.uniform(o[:8], d[:8], -1.0, 1.0, 96)
        sig, span, color = 1.7, 2.0, torch.tensor([0.3, 0.6, 0.2], dtype=torch.float64)

        def const_field(pts, dirs):
            return (
                torch.full((pts.shape[0],), sig, dtype=torch.float64),
                color.expand(pts.shape[0], 3).clone(),
            )

        from avatarkit.volume import render_ray

        out = render_ray(const_field, uniform)
        want = (1 - math.exp(-sig * span)) * color
        err = float((out - want).abs().max())
        assert err < 1e-6, f"closed-form error {err}"


def test_hybrid_rendering_limits():
    with criterion("hybrid: transparent field bit-exact; opaque surface weight < 1e-6"):
        model = toy_head()
        mesh = skin_mesh(model, AvatarParams.zeros(model))
        tex = TextureMap.blank(32, fill=0.53)
        cam = Camera(width=24, height=24, distance=2.0)
        surface = rasterize(tex, cam, mesh)

        def zero_field(pts, dirs):
            return torch.zeros(pts.shape[0], dtype=torch.float64), torch.zeros(
                pts.shape[0], 3, dtype=torch.float64
            )

        result = render_image(zero_field, cam, mesh=mesh, surface=surface, n_samples=16, seed=0)
        assert torch.equal(result.image.data, surface.data), "transparent hybrid not bit-exact"

        def opaque_field(pts, dirs):
            return torch.full((pts.shape[0],), 1e9, dtype=torch.float64), torch.ones(
                pts.shape[0], 3, dtype=torch.float64
            )

        result = render_image(opaque_field, cam, mesh=mesh, surface=surface, n_samples=16, seed=0)
        hit = result.surface_hit
        surface_weight = 1.0 - result.image.alpha[hit]
        assert float(surface_weight.abs().max()) < 1e-6


# ---------------------------------------------------------------------------
# Gradient checks (central finite differences, double precision)
# ---------------------------------------------------------------------------

def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def test_gradient_checks():
    with criterion("gradients vs central differences: rasterizer, field, losses (rel err < 1e-3)"):
        rng = np.random.default_rng(7)

        # Rasterizer texel gradients.
        model = toy_head()
        mesh = skin_mesh(model, AvatarParams.zeros(model))
        cam = Camera(width=32, height=32, distance=2.0)
        geom = raster_geometry(mesh, cam)
        tex = torch.rand(24, 24, 3, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
        weights = torch.rand(int(geom.hit.sum()), 3, generator=torch.Generator().manual_seed(2),
                             dtype=torch.float64)

        def raster_loss(data):
            return (sample_texture(data, geom.uv) * weights).sum()

        leaf = tex.clone().requires_grad_(True)
        raster_loss(leaf).backward()
        checked = 0
        h = 1e-6
        while checked < 50:
            y, x, c = rng.integers(24), rng.integers(24), rng.integers(3)
            if abs(float(leaf.grad[y, x, c])) < 1e-9:
                continue
            plus, minus = tex.clone(), tex.clone()
            plus[y, x, c] += h
            minus[y, x, c] -= h
            fd = (float(raster_loss(plus)) - float(raster_loss(minus))) / (2 * h)
            assert _rel_err(float(leaf.grad[y, x, c]), fd) < 1e-3
            checked += 1

        # Field-parameter gradients through render_image.
        field = RadianceField(FieldConfig(channels=3, hidden=10, pos_bands=3, dir_bands=2, seed=3))
        small_cam = Camera(width=8, height=8, distance=2.0)
        tex_map = TextureMap.blank(16, fill=0.4)
        surface = rasterize(tex_map, small_cam, mesh)

        def field_loss():
            result = render_image(field, small_cam, mesh=mesh, surface=surface, n_samples=6, seed=5)
            return (result.image.data * probe_weights).sum()

        probe_weights = torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(4),
                                   dtype=torch.float64)
        for p in field.parameters():
            p.grad = None
        field_loss().backward()
        params = [p for p in field.parameters()]
        flat_grads = torch.cat([p.grad.reshape(-1) for p in params])
        flats = torch.cat([p.detach().reshape(-1) for p in params])
        n_total = flats.numel()
        checked = 0
        attempts = 0
        h = 1e-5
        while checked < 50 and attempts < 500:
            attempts += 1
            i = int(rng.integers(n_total))
            if abs(float(flat_grads[i])) < 1e-8:
                continue
            with torch.no_grad():
                _nudge_param(params, i, +h)
                fp = float(field_loss().detach())
                _nudge_param(params, i, -2 * h)
                fm = float(field_loss().detach())
                _nudge_param(params, i, +h)
            fd = (fp - fm) / (2 * h)
            assert _rel_err(float(flat_grads[i]), fd) < 1e-3, f"param {i}: {float(flat_grads[i])} vs {fd}"
            checked += 1
        assert checked >= 50

        # Loss gradients: mask, sparsity, similarity.
        target = torch.from_numpy(rng.uniform(size=(10, 10)))
        z_text = torch.from_numpy(rng.normal(size=64))
        for fn, x0 in (
            (lambda m: mask_loss(target, m), torch.from_numpy(rng.uniform(0.05, 0.95, size=(10, 10)))),
            (sparsity_loss, torch.from_numpy(rng.uniform(0.05, 0.95, size=(10, 10)))),
            (lambda z: similarity_loss(z, z_text), torch.from_numpy(rng.normal(size=64))),
        ):
            leaf = x0.clone().requires_grad_(True)
            fn(leaf).backward()
            flat = x0.reshape(-1)
            checked = 0
            attempts = 0
            while checked < 50 and attempts < 500:
                attempts += 1
                i = int(rng.integers(flat.numel()))
                an = float(leaf.grad.reshape(-1)[i])
                if abs(an) < 1e-10:
                    continue
                plus, minus = flat.clone(), flat.clone()
                plus[i] += 1e-6
                minus[i] -= 1e-6
                fd = (
                    float(fn(plus.reshape(x0.shape)).detach())
                    - float(fn(minus.reshape(x0.shape)).detach())
                ) / (2e-6)
                assert _rel_err(an, fd) < 1e-3
                checked += 1
            assert checked >= 50


def _nudge_param(params, flat_index, delta):
    offset = 0
    for p in params:
        n = p.numel()
        if flat_index < offset + n:
            p.reshape(-1)[flat_index - offset] += delta
            return
        offset += n
    raise IndexError(flat_index)


# ---------------------------------------------------------------------------
# Landmark fit recovery
# ---------------------------------------------------------------------------

def test_fit_recovery():
    with criterion("68-landmark fit recovery (10 active coeffs, < 1e-3, < 60 s)"):
        model = toy_head()
        assert len(model.landmark_vertex_ids) == 68
        rng = np.random.default_rng(0)
        beta_gt = torch.zeros(model.n_shape, dtype=torch.float64)
        idx = rng.choice(model.n_shape, size=10, replace=False)
        beta_gt[idx] = torch.from_numpy(rng.normal(size=10) * 0.8)
        posed = skin_mesh(model, AvatarParams(
            beta=beta_gt,
            theta=model.theta_canonical.clone(),
            psi=torch.zeros(model.n_expression, dtype=torch.float64),
        ))
        ids = model.landmark_vertex_ids
        landmarks = LandmarkSet(
            points=posed.vertices[ids], vertex_ids=ids,
            confidence=torch.ones(68, dtype=torch.float64),
        )
        start = time.perf_counter()
        result = fit_shape(model, landmarks, FitConfig(
            max_iters=1800, learning_rate=0.05, lr_decay=0.996,
            optimize_pose=False, optimize_expression=False,
        ))
        elapsed = time.perf_counter() - start
        recovered = skin_mesh(model, result.params)
        err = float((recovered.vertices[ids] - landmarks.points).norm(dim=1).mean())
        assert err < 1e-3, f"mean landmark error {err}"
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# Canonicalization
# ---------------------------------------------------------------------------

def test_canonicalization_criteria():
    with criterion("canonicalization: rest identity + rigid invariance (1e-9), unskinning (1e-6)"):
        model = toy_head()
        params0 = AvatarParams.zeros(model)
        cmap = CanonicalMap(model, params0)
        pts = np.random.default_rng(3).uniform(-0.4, 0.4, size=(300, 3))
        out, _, inside = cmap.map_points(pts)
        assert inside.any()
        assert np.abs(out[inside] - pts[inside]).max() < 1e-9

        aa = torch.tensor([0.25, -0.4, 0.3], dtype=torch.float64)
        rot = rodrigues(aa)
        transl = torch.tensor([0.2, -0.15, 0.1], dtype=torch.float64)
        theta = model.theta_canonical.clone()
        theta[:3] = aa
        j0 = joint_positions(model, torch.zeros(model.n_shape, dtype=torch.float64))[0]
        theta[3 * model.n_joints :] = transl + rot @ j0 - j0
        moved = CanonicalMap(model, AvatarParams(
            beta=torch.zeros(model.n_shape, dtype=torch.float64),
            theta=theta,
            psi=torch.zeros(model.n_expression, dtype=torch.float64),
        ))
        pts_moved = pts @ rot.numpy().T + transl.numpy()
        out2, _, inside2 = moved.map_points(pts_moved)
        assert np.array_equal(inside, inside2)
        assert np.abs(out2[inside] - out[inside]).max() < 1e-9

        cyl = toy.cylinder_model(n_joints=1, seed=2, pose_basis_scale=0.0)
        theta_c = torch.zeros(6, dtype=torch.float64)
        theta_c[:3] = torch.tensor([0.0, 0.0, 0.8])
        cyl_map = CanonicalMap(cyl, AvatarParams(
            beta=torch.zeros(cyl.n_shape, dtype=torch.float64),
            theta=theta_c,
            psi=torch.zeros(cyl.n_expression, dtype=torch.float64),
        ))
        posed = cyl_map.posed.vertices
        for j in (0, 23, 77):
            back, _, ok = cyl_map.map_points(posed[j].numpy()[None, :])
            assert ok[0]
            assert np.abs(back[0] - cyl.template_vertices[j].numpy()).max() < 1e-6


# ---------------------------------------------------------------------------
# SDS contract
# ---------------------------------------------------------------------------

def test_sds_contract():
    with criterion("SDS: perfect critic exact zero; linear critic closed form (1e-9); byte-exact determinism"):
        oracle = SyntheticOracle(critic=perfect_critic)
        gen = torch.Generator().manual_seed(0)
        render = torch.rand(8, 8, 4, generator=gen, dtype=torch.float64)
        result = sds_gradient(render, "p", oracle, gen)
        assert torch.equal(result.grad, torch.zeros_like(result.grad))

        oracle = SyntheticOracle(critic=linear_critic)
        gen = torch.Generator().manual_seed(1)
        render = torch.rand(8, 8, 4, generator=gen, dtype=torch.float64)
        result = sds_gradient(render, "p", oracle, gen)
        q_t = oracle.schedule().noise_image(render, result.eps, result.t)
        closed_form = result.u_t * (q_t - result.eps)
        assert float((result.grad - closed_form).abs().max()) < 1e-9

        draws = []
        for _ in range(2):
            gen = torch.Generator().manual_seed(99)
            render = torch.rand(8, 8, 4, generator=gen, dtype=torch.float64)
            r = sds_gradient(render, "p", oracle, gen)
            draws.append((r.t, r.grad.numpy().tobytes()))
        assert draws[0] == draws[1]


# ---------------------------------------------------------------------------
# Synthetic end-to-end training
# ---------------------------------------------------------------------------

def test_synthetic_end_to_end_training():
    with criterion("synthetic end-to-end: rendered-mask IoU >= 0.8 within 2000 iters / 15 min"):
        torch.manual_seed(0)
        model = toy_head()
        beta = torch.zeros(model.n_shape, dtype=torch.float64)
        beta[:5] = 0.3
        avatar = AvatarRig(
            model=model,
            params=AvatarParams(beta=beta, theta=model.theta_canonical.clone(),
                                psi=torch.zeros(model.n_expression, dtype=torch.float64)),
            texture=TextureMap.blank(64, fill=0.55),
        )
        guide = ShellGuidance(avatar, ShellSpec(), latent_size=24, n_samples=20, codec_factor=2)
        probes = [Camera(azimuth_deg=a, elevation_deg=10, distance=2.2, width=24, height=24)
                  for a in (0, 90, 180, 270)]

        state = {"iou": 0.0, "iters": 0}

        def stop(it, comp):
            state["iou"] = guide.silhouette_iou(comp, probes)
            state["iters"] = it
            return state["iou"] >= 0.8

        cfg = TrainConfig(
            iterations=2000, learning_rate=0.01, latent_size=24, n_samples=20,
            seg_cadence=5, field=FieldConfig(hidden=64, seed=3, density_bias=0.0),
            camera=CameraDistribution(elevation_range=(0, 30)),
            weights=LossWeights(mask=0.1),
            seed=11, stop_fn=stop, probe_every=100,
        )
        start = time.perf_counter()
        component = train_component(avatar, "a red cap", "cap", guide.oracle(), cfg)
        elapsed = time.perf_counter() - start
        if state["iou"] < 0.8:  # cap reached without early stop: measure final
            state["iou"] = guide.silhouette_iou(component, probes)
            state["iters"] = cfg.iterations
        print(f"  [end-to-end] IoU {state['iou']:.3f} after {state['iters']} iters, {elapsed:.0f}s",
              flush=True)
        assert state["iou"] >= 0.8, f"IoU {state['iou']:.3f}"
        assert state["iters"] <= 2000
        assert elapsed < 900.0, f"took {elapsed:.0f}s"


# ---------------------------------------------------------------------------
# Transfer invariance
# ---------------------------------------------------------------------------

def test_transfer_invariance():
    with criterion("transfer: identical-shape avatars render pixel-identically; attach/detach exact"):
        from test_compose import make_avatar, make_component

        model = toy.head_model(n_lat=9, n_lon=12)
        cam = Camera(width=20, height=20, distance=2.2, elevation_deg=10.0)
        avatar_a = make_avatar(model, beta_scale=0.25)
        avatar_b = make_avatar(model, beta_scale=0.25)
        comp = make_component()
        img_a = render_avatar(attach(avatar_a, comp), cam, n_samples=8, seed=5)
        img_b = render_avatar(attach(avatar_b, comp), cam, n_samples=8, seed=5)
        assert torch.equal(img_a.data, img_b.data)
        assert torch.equal(img_a.alpha, img_b.alpha)

        base = render_avatar(avatar_a, cam, n_samples=8, seed=5)
        round_trip = render_avatar(detach(attach(avatar_a, comp), comp.component_id), cam,
                                   n_samples=8, seed=5)
        assert torch.equal(base.data, round_trip.data)


# ---------------------------------------------------------------------------
# Loss constants
# ---------------------------------------------------------------------------

def test_loss_constants():
    with criterion("loss constants: F_BE(0.5) = ln 2 (1e-9); similarity endpoints exact"):
        val = float(sparsity_loss(torch.tensor([[0.5]], dtype=torch.float64)))
        assert abs(val - math.log(2.0)) < 1e-9

        z = torch.tensor([0.2, -0.7, 0.4], dtype=torch.float64)
        assert float(similarity_loss(z, z.clone())) == -1.0
        assert float(similarity_loss(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 3.0]))) == 0.0
        assert float(similarity_loss(z, -z)) == 1.0
