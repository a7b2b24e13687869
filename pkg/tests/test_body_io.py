import struct

import pytest
import torch

from avatarkit import toy
from avatarkit.body_io import load_model, save_model
from avatarkit.container import MAGIC, read_container, write_container
from avatarkit.errors import LoadError
from avatarkit.mesh import load_obj, save_obj


@pytest.fixture()
def model():
    return toy.cylinder_model(n_segments=4, n_rings=4, n_joints=2, seed=0)


def test_round_trip_fields(model, tmp_path):
    path = tmp_path / "toy.bmdl"
    save_model(model, path)
    loaded = load_model(path)
    for name in (
        "template_vertices",
        "faces",
        "shape_basis",
        "expression_basis",
        "pose_basis",
        "joint_regressor",
        "skin_weights",
        "kinematic_parents",
        "theta_canonical",
        "uvs",
        "landmark_vertex_ids",
    ):
        assert torch.equal(getattr(model, name), getattr(loaded, name)), name
    assert loaded.landmark_names == model.landmark_names


def test_round_trip_bit_identical(model, tmp_path):
    p1 = tmp_path / "a.bmdl"
    p2 = tmp_path / "b.bmdl"
    save_model(model, p1)
    save_model(load_model(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_weight_column_named_in_error(model, tmp_path):
    path = tmp_path / "bad.bmdl"
    save_model(model, path)
    manifest, tensors = read_container(path)
    tensors["skin_weights"][:, 3] *= 0.9
    write_container(path, manifest, tensors)
    with pytest.raises(LoadError, match=r"skin_weights column 3 sums to 0\.9"):
        load_model(path)


def test_truncated_block_reports_offset(model, tmp_path):
    path = tmp_path / "trunc.bmdl"
    save_model(model, path)
    data = path.read_bytes()
    path.write_bytes(data[:-20])
    with pytest.raises(LoadError, match=r"truncated.*byte"):
        load_model(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.bmdl"
    path.write_bytes(b"not a container at all")
    with pytest.raises(LoadError, match="magic"):
        load_model(path)


def test_corrupt_header_json(model, tmp_path):
    path = tmp_path / "hdr.bmdl"
    save_model(model, path)
    data = bytearray(path.read_bytes())
    (header_len,) = struct.unpack_from("<Q", data, len(MAGIC))
    data[len(MAGIC) + 8] = ord("X")  # stomp the first header byte
    path.write_bytes(bytes(data))
    with pytest.raises(LoadError, match="JSON"):
        load_model(path)


def test_missing_tensor_named(model, tmp_path):
    path = tmp_path / "missing.bmdl"
    save_model(model, path)
    manifest, tensors = read_container(path)
    del tensors["joint_regressor"]
    write_container(path, manifest, tensors)
    with pytest.raises(LoadError, match="joint_regressor"):
        load_model(path)


def test_version_guard(model, tmp_path):
    path = tmp_path / "version.bmdl"
    save_model(model, path)
    manifest, tensors = read_container(path)
    manifest["version"] = 99
    write_container(path, manifest, tensors)
    with pytest.raises(LoadError, match="version"):
        load_model(path)


def test_obj_round_trip(model, tmp_path):
    mesh = model.mesh()
    path = tmp_path / "mesh.obj"
    save_obj(mesh, path)
    text = path.read_text()
    assert text.startswith("v ") and "vt " in text and "f " in text
    loaded = load_obj(path)
    assert torch.allclose(loaded.vertices, mesh.vertices, atol=1e-6)
    assert torch.equal(loaded.faces, mesh.faces)
    assert torch.allclose(loaded.uvs, mesh.uvs, atol=1e-6)
