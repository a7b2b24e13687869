import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from avatarkit import toy
from avatarkit.body import (
    AvatarParams,
    joint_positions,
    pose_feature,
    rodrigues,
    skin_mesh,
    vertex_transforms,
)
from avatarkit.errors import ParameterError


# ---------------------------------------------------------------------------
# Independent oracle: a naive loop-based forward-kinematics + blendshape
# implementation in numpy, sharing no code with the package under test.
# ---------------------------------------------------------------------------

def naive_skin(model, beta, theta, psi):
    T = model.template_vertices.numpy()
    S = model.shape_basis.numpy()
    E = model.expression_basis.numpy()
    P = model.pose_basis.numpy()
    reg = model.joint_regressor.numpy()
    W = model.skin_weights.numpy()
    parents = model.kinematic_parents.tolist()
    n_k = len(parents)
    beta, theta, psi = np.asarray(beta), np.asarray(theta), np.asarray(psi)

    shaped = T + np.tensordot(S, beta, axes=([2], [0]))
    joints = reg @ shaped

    rots = [Rotation.from_rotvec(theta[3 * k : 3 * k + 3]).as_matrix() for k in range(n_k)]
    feat = np.concatenate([(rots[k] - np.eye(3)).reshape(-1) for k in range(1, n_k)]) if n_k > 1 else np.zeros(0)
    offsets = (
        np.tensordot(S, beta, axes=([2], [0]))
        + np.tensordot(E, psi, axes=([2], [0]))
        + (np.tensordot(P, feat, axes=([2], [0])) if P.shape[2] else 0.0)
    )

    world = [None] * n_k
    for k in range(n_k):
        local = np.eye(4)
        local[:3, :3] = rots[k]
        local[:3, 3] = joints[k] if k == 0 else joints[k] - joints[parents[k]]
        world[k] = local if k == 0 else world[parents[k]] @ local
    rel = []
    transl = np.eye(4)
    transl[:3, 3] = theta[3 * n_k :]
    for k in range(n_k):
        undo = np.eye(4)
        undo[:3, 3] = -joints[k]
        rel.append(transl @ world[k] @ undo)

    out = np.zeros_like(T)
    for i in range(T.shape[0]):
        m = sum(W[k, i] * rel[k] for k in range(n_k))
        p = T[i] + offsets[i]
        out[i] = (m @ np.append(p, 1.0))[:3]
    return out


@pytest.fixture(scope="module")
def model():
    return toy.cylinder_model(n_joints=3, seed=1)


def params_of(model, beta=None, theta=None, psi=None):
    return AvatarParams(
        beta=torch.zeros(model.n_shape, dtype=torch.float64) if beta is None else beta,
        theta=model.theta_canonical.clone() if theta is None else theta,
        psi=torch.zeros(model.n_expression, dtype=torch.float64) if psi is None else psi,
    )


class TestJointPositions:
    def test_zero_beta_is_regressed_template(self, model):
        j = joint_positions(model, torch.zeros(model.n_shape, dtype=torch.float64))
        expected = model.joint_regressor @ model.template_vertices
        assert torch.allclose(j, expected, atol=0, rtol=0)

    def test_unit_coefficient_adds_basis_column(self, model):
        beta = torch.zeros(model.n_shape, dtype=torch.float64)
        beta[4] = 1.0
        j = joint_positions(model, beta)
        expected = model.joint_regressor @ (model.template_vertices + model.shape_basis[:, :, 4])
        assert torch.allclose(j, expected, atol=1e-14)

    def test_matches_dense_matrix_oracle(self):
        m = toy.cylinder_model(n_segments=3, n_rings=3, n_joints=2, seed=7)
        rng = np.random.default_rng(3)
        beta = torch.from_numpy(rng.normal(size=m.n_shape))
        shaped = m.template_vertices.numpy() + np.einsum(
            "vci,i->vc", m.shape_basis.numpy(), beta.numpy()
        )
        expected = m.joint_regressor.numpy() @ shaped
        got = joint_positions(m, beta).numpy()
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_dimension_mismatch_raises(self, model):
        with pytest.raises(ParameterError):
            joint_positions(model, torch.zeros(model.n_shape + 1, dtype=torch.float64))


class TestVertexTransforms:
    def test_rest_pose_gives_identity(self, model):
        vt = vertex_transforms(model, params_of(model))
        eye = torch.eye(4, dtype=torch.float64).expand_as(vt.matrices)
        assert float((vt.matrices - eye).abs().max()) < 1e-9

    def test_global_rotation_block(self):
        m = toy.cylinder_model(n_joints=1, seed=2, pose_basis_scale=0.0)
        aa = torch.tensor([0.3, -0.2, 0.5], dtype=torch.float64)
        theta = torch.zeros(3 * m.n_joints + 3, dtype=torch.float64)
        theta[:3] = aa
        vt = vertex_transforms(m, params_of(m, theta=theta))
        expected_rot = rodrigues(aa)
        for i in range(0, m.n_vertices, 17):
            assert torch.allclose(vt.matrices[i, :3, :3], expected_rot, atol=1e-12)

    def test_two_joint_bend_matches_hand_composition(self):
        m = toy.cylinder_model(n_segments=3, n_rings=3, n_joints=2, seed=5, pose_basis_scale=0.0)
        theta = torch.zeros(3 * 2 + 3, dtype=torch.float64)
        theta[3:6] = torch.tensor([np.pi / 2, 0.0, 0.0])  # 90 deg bend at joint 2
        params = params_of(m, theta=theta)
        joints = joint_positions(m, params.beta).numpy()

        r2 = Rotation.from_rotvec([np.pi / 2, 0, 0]).as_matrix()
        a1 = np.eye(4)
        a1[:3, 3] = joints[0]
        local2 = np.eye(4)
        local2[:3, :3] = r2
        local2[:3, 3] = joints[1] - joints[0]
        a2 = a1 @ local2
        g = [a1.copy(), a2.copy()]
        for k in range(2):
            undo = np.eye(4)
            undo[:3, 3] = -joints[k]
            g[k] = g[k] @ undo
        expected = 0.5 * g[0] + 0.5 * g[1]

        w = m.skin_weights.numpy()
        vid = int(np.argmin(np.abs(w[0] - 0.5)))  # most evenly skinned vertex
        w0, w1 = w[0, vid], w[1, vid]
        expected = w0 * g[0] + w1 * g[1]
        vt = vertex_transforms(m, params)
        np.testing.assert_allclose(vt.matrices[vid].numpy(), expected, atol=1e-12)

    def test_nonfinite_params_rejected(self, model):
        theta = model.theta_canonical.clone()
        theta[0] = float("nan")
        with pytest.raises(ParameterError):
            vertex_transforms(model, params_of(model, theta=theta))

    def test_bottom_rows(self, model):
        rng = torch.Generator().manual_seed(11)
        params = params_of(
            model,
            beta=0.2 * torch.randn(model.n_shape, generator=rng, dtype=torch.float64),
            theta=0.2 * torch.randn(3 * model.n_joints + 3, generator=rng, dtype=torch.float64),
        )
        vt = vertex_transforms(model, params)
        bottom = vt.matrices[:, 3, :]
        expected = torch.tensor([0.0, 0.0, 0.0, 1.0], dtype=torch.float64).expand_as(bottom)
        assert torch.equal(bottom, expected)


class TestSkinMesh:
    def test_rest_pose_reproduces_template(self, model):
        posed = skin_mesh(model, params_of(model))
        assert float((posed.vertices - model.template_vertices).abs().max()) < 1e-12

    def test_rigid_motion_preserves_edge_lengths(self):
        m = toy.cylinder_model(n_joints=1, seed=3, pose_basis_scale=0.0)
        theta = torch.zeros(6, dtype=torch.float64)
        theta[:3] = torch.tensor([0.4, 0.1, -0.3])
        theta[3:] = torch.tensor([0.5, -0.2, 0.8])
        posed = skin_mesh(m, params_of(m, theta=theta))
        e = m.faces[:, 0], m.faces[:, 1]
        before = (m.template_vertices[e[0]] - m.template_vertices[e[1]]).norm(dim=1)
        after = (posed.vertices[e[0]] - posed.vertices[e[1]]).norm(dim=1)
        assert torch.allclose(before, after, atol=1e-12)

    def test_equals_vertex_transform_application(self, model):
        rng = torch.Generator().manual_seed(4)
        params = params_of(
            model,
            beta=0.3 * torch.randn(model.n_shape, generator=rng, dtype=torch.float64),
            theta=0.3 * torch.randn(3 * model.n_joints + 3, generator=rng, dtype=torch.float64),
            psi=0.3 * torch.randn(model.n_expression, generator=rng, dtype=torch.float64),
        )
        posed = skin_mesh(model, params)
        vt = vertex_transforms(model, params)
        assert torch.equal(posed.vertices, vt.apply(model.template_vertices))

    @pytest.mark.parametrize("trial", range(10))
    def test_matches_naive_oracle(self, model, trial):
        rng = np.random.default_rng(100 + trial)
        beta = rng.normal(size=model.n_shape) * 0.5
        theta = rng.normal(size=3 * model.n_joints + 3) * 0.4
        psi = rng.normal(size=model.n_expression) * 0.5
        got = skin_mesh(
            model,
            AvatarParams(
                beta=torch.from_numpy(beta), theta=torch.from_numpy(theta), psi=torch.from_numpy(psi)
            ),
        ).vertices.numpy()
        expected = naive_skin(model, beta, theta, psi)
        np.testing.assert_allclose(got, expected, atol=1e-9)


class TestInvariants:
    def test_blendshape_linearity(self, model):
        rng = np.random.default_rng(9)
        b1 = torch.from_numpy(rng.normal(size=model.n_shape))
        b2 = torch.from_numpy(rng.normal(size=model.n_shape))
        from avatarkit.body import blendshape_offsets

        def offsets(beta):
            return blendshape_offsets(model, params_of(model, beta=beta))

        lhs = offsets(b1 + b2)
        rhs = offsets(b1) + offsets(b2)
        assert torch.allclose(lhs, rhs, atol=1e-12)

    def test_rigid_equivariance(self):
        # Pre-rotating the root joint rotates the skinned output about the
        # root joint's rest position.
        m = toy.cylinder_model(n_joints=2, seed=6, pose_basis_scale=0.0)
        rng = np.random.default_rng(12)
        theta = torch.from_numpy(rng.normal(size=3 * m.n_joints + 3) * 0.3)
        theta[3 * m.n_joints :] = 0.0  # keep the global translation out of it
        base = skin_mesh(m, params_of(m, theta=theta)).vertices

        rot = rodrigues(torch.tensor([0.2, 0.7, -0.1], dtype=torch.float64))
        theta2 = theta.clone()
        combined = rot @ rodrigues(theta[:3])
        theta2[:3] = torch.from_numpy(Rotation.from_matrix(combined.numpy()).as_rotvec())
        posed2 = skin_mesh(m, params_of(m, theta=theta2)).vertices

        j0 = joint_positions(m, torch.zeros(m.n_shape, dtype=torch.float64))[0]
        expected = (base - j0) @ rot.T + j0
        assert torch.allclose(posed2, expected, atol=1e-9)

    def test_skinning_convexity(self, model):
        rng = np.random.default_rng(20)
        theta = torch.from_numpy(rng.normal(size=3 * model.n_joints + 3) * 0.5)
        params = params_of(model, theta=theta)
        posed = skin_mesh(model, params).vertices.numpy()

        from avatarkit.body import blendshape_offsets, joint_world_transforms

        g = joint_world_transforms(model, params).numpy()
        rest = (model.template_vertices + blendshape_offsets(model, params)).numpy()
        w = model.skin_weights.numpy()
        hom = np.concatenate([rest, np.ones((len(rest), 1))], axis=1)
        candidates = np.einsum("kab,vb->kva", g, hom)[:, :, :3]  # per-joint rigid candidates
        blend = np.einsum("kv,kva->va", w, candidates)
        np.testing.assert_allclose(posed, blend, atol=1e-9)
        # Convexity: each coordinate lies within the candidates' min/max box.
        lo = candidates.min(axis=0) - 1e-9
        hi = candidates.max(axis=0) + 1e-9
        assert np.all(posed >= lo) and np.all(posed <= hi)

    @pytest.mark.parametrize("trial", range(20))
    def test_transform_consistency_random(self, model, trial):
        rng = np.random.default_rng(200 + trial)
        params = AvatarParams(
            beta=torch.from_numpy(rng.normal(size=model.n_shape) * 0.4),
            theta=torch.from_numpy(rng.normal(size=3 * model.n_joints + 3) * 0.4),
            psi=torch.from_numpy(rng.normal(size=model.n_expression) * 0.4),
        )
        posed = skin_mesh(model, params)
        vt = vertex_transforms(model, params)
        assert torch.allclose(posed.vertices, vt.apply(model.template_vertices), atol=0, rtol=0)


class TestRodrigues:
    def test_matches_scipy(self):
        rng = np.random.default_rng(31)
        aa = rng.normal(size=(50, 3))
        got = rodrigues(torch.from_numpy(aa)).numpy()
        expected = Rotation.from_rotvec(aa).as_matrix()
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_zero_angle_identity(self):
        got = rodrigues(torch.zeros(3, dtype=torch.float64))
        assert torch.equal(got, torch.eye(3, dtype=torch.float64))

    def test_pose_feature_zero_at_canonical(self, model):
        feat = pose_feature(model, model.theta_canonical)
        assert torch.equal(feat, torch.zeros_like(feat))
