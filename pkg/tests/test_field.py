import numpy as np
import pytest
import torch

from avatarkit.canonical import CanonicalFrame
from avatarkit.component import RadianceComponent, load_component, save_component
from avatarkit.container import read_container, write_container
from avatarkit.errors import LoadError, ParameterError
from avatarkit.field import FieldConfig, RadianceField, direction_angles, fit_rgb_adapter, positional_encoding


def rand_dirs(n, gen):
    d = torch.randn(n, 3, generator=gen, dtype=torch.float64)
    return d / d.norm(dim=1, keepdim=True)


class TestField:
    def test_shapes_and_nonnegative_density(self):
        rf = RadianceField(FieldConfig(channels=4, hidden=32, seed=0))
        gen = torch.Generator().manual_seed(1)
        x = torch.randn(17, 3, generator=gen, dtype=torch.float64)
        sigma, feat = rf(x, rand_dirs(17, gen))
        assert sigma.shape == (17,) and feat.shape == (17, 4)
        assert bool((sigma >= 0).all())

    def test_rgb_mode_bounded(self):
        rf = RadianceField(FieldConfig(channels=3, hidden=32, seed=0))
        gen = torch.Generator().manual_seed(2)
        x = torch.randn(40, 3, generator=gen, dtype=torch.float64) * 3
        _, feat = rf(x, rand_dirs(40, gen))
        assert bool((feat > 0).all()) and bool((feat < 1).all())

    def test_seeded_construction_deterministic(self):
        a = RadianceField(FieldConfig(seed=7, hidden=16))
        b = RadianceField(FieldConfig(seed=7, hidden=16))
        for (n1, p1), (n2, p2) in zip(a.named_parameters(), b.named_parameters()):
            assert n1 == n2 and torch.equal(p1, p2)
        c = RadianceField(FieldConfig(seed=8, hidden=16))
        assert not torch.equal(a.head.weight, c.head.weight)

    def test_parameter_count_fixed(self):
        cfg = FieldConfig(hidden=32, pos_bands=4, dir_bands=2)
        rf = RadianceField(cfg)
        n = sum(p.numel() for p in rf.parameters())
        in_dim = 3 * (1 + 2 * 4) + 2 * (1 + 2 * 2)
        expected = (in_dim * 32 + 32) + 2 * (32 * 32 + 32) + (32 * 5 + 5)
        assert n == expected

    def test_positional_encoding_layout(self):
        x = torch.tensor([[0.5, -0.25, 1.0]], dtype=torch.float64)
        enc = positional_encoding(x, bands=3)
        assert enc.shape == (1, 3 * (1 + 6))
        assert torch.equal(enc[0, :3], x[0])
        assert float(enc[0, 3]) == pytest.approx(np.sin(0.5))
        assert float(enc[0, 6]) == pytest.approx(np.cos(0.5))
        assert float(enc[0, 9]) == pytest.approx(np.sin(1.0))  # band 1: 2x

    def test_direction_angles(self):
        d = torch.tensor([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=torch.float64)
        ang = direction_angles(d)
        assert torch.allclose(ang[0], torch.tensor([0.0, 0.0], dtype=torch.float64), atol=1e-12)
        assert float(ang[1, 0]) == pytest.approx(np.pi / 2)
        assert float(ang[2, 1]) == pytest.approx(np.pi / 2)

    def test_invalid_config(self):
        with pytest.raises(ParameterError):
            FieldConfig(channels=2)


class TestAdapter:
    def test_least_squares_recovers_exact_affine(self):
        gen = torch.Generator().manual_seed(3)
        w_true = torch.randn(3, 4, generator=gen, dtype=torch.float64)
        b_true = torch.randn(3, generator=gen, dtype=torch.float64)
        pairs = []
        for _ in range(3):
            z = torch.randn(8, 8, 4, generator=gen, dtype=torch.float64)
            rgb = torch.einsum("ck,hwk->hwc", w_true, z) + b_true
            pairs.append((z, rgb))
        adapter = fit_rgb_adapter(pairs)
        z_test = torch.randn(5, 5, 4, generator=gen, dtype=torch.float64)
        want = torch.einsum("ck,hwk->hwc", w_true, z_test) + b_true
        with torch.no_grad():
            got = adapter(z_test.reshape(-1, 4)).reshape(5, 5, 3)
        assert float((got - want).abs().max()) < 1e-6

    def test_adapter_requires_pairs(self):
        with pytest.raises(ParameterError):
            fit_rgb_adapter([])

    def test_attach_validates(self):
        rf = RadianceField(FieldConfig(channels=3, hidden=16))
        with pytest.raises(ParameterError):
            rf.attach_adapter(torch.nn.Linear(4, 3, dtype=torch.float64))
        rf4 = RadianceField(FieldConfig(channels=4, hidden=16))
        with pytest.raises(ParameterError):
            rf4.attach_adapter(torch.nn.Linear(3, 3, dtype=torch.float64))

    def test_rgb_wrapper_clamps(self):
        rf = RadianceField(FieldConfig(channels=4, hidden=16, seed=1))
        adapter = torch.nn.Linear(4, 3, dtype=torch.float64)
        with torch.no_grad():
            adapter.weight *= 100
        rf.attach_adapter(adapter)
        fn = rf.as_rgb_field()
        gen = torch.Generator().manual_seed(4)
        x = torch.randn(30, 3, generator=gen, dtype=torch.float64)
        _, rgb = fn(x, rand_dirs(30, gen))
        assert bool((rgb >= 0).all()) and bool((rgb <= 1).all())


class TestComponentIO:
    def make_component(self, with_adapter=False):
        rf = RadianceField(FieldConfig(channels=4, hidden=16, pos_bands=4, dir_bands=2, seed=5))
        if with_adapter:
            rf.attach_adapter(torch.nn.Linear(4, 3, dtype=torch.float64))
        return RadianceComponent(
            component_id="hair",
            field=rf,
            frame=CanonicalFrame(n_neighbors=4, tau=0.15, cutoff=0.4),
            prompt="wavy hair",
            part_keyword="hair",
            seed=9,
            training_meta={"stage": "latent"},
        )

    @pytest.mark.parametrize("with_adapter", [False, True])
    def test_round_trip(self, tmp_path, with_adapter):
        comp = self.make_component(with_adapter)
        path = tmp_path / "hair.rfc"
        save_component(comp, path)
        loaded = load_component(path)
        assert loaded.component_id == "hair"
        assert loaded.frame == comp.frame
        assert loaded.prompt == comp.prompt
        assert loaded.has_adapter == with_adapter
        # Parameters survive the float32 container round trip.
        for (n1, p1), (n2, p2) in zip(
            comp.field.state_dict().items(), loaded.field.state_dict().items()
        ):
            assert n1 == n2
            assert float((p1 - p2).abs().max()) < 1e-6

    def test_round_trip_stable(self, tmp_path):
        # Save -> load -> save reproduces identical bytes (float32 fixpoint).
        comp = self.make_component()
        p1, p2 = tmp_path / "a.rfc", tmp_path / "b.rfc"
        save_component(comp, p1)
        save_component(load_component(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_version_guard(self, tmp_path):
        comp = self.make_component()
        path = tmp_path / "c.rfc"
        save_component(comp, path)
        manifest, tensors = read_container(path)
        manifest["version"] = 2
        write_container(path, manifest, tensors)
        with pytest.raises(LoadError, match="version"):
            load_component(path)

    def test_wrong_blocks_rejected(self, tmp_path):
        comp = self.make_component()
        path = tmp_path / "d.rfc"
        save_component(comp, path)
        manifest, tensors = read_container(path)
        key = sorted(tensors)[0]
        tensors[key] = tensors[key][..., :-1]
        write_container(path, manifest, tensors)
        with pytest.raises(LoadError):
            load_component(path)
