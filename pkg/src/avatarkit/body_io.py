"""Body model container (.bmdl): JSON manifest + float64 tensor blocks."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from . import container
from .body import BodyModel
from .errors import LoadError, ParameterError

FORMAT = "bmdl"
VERSION = 1

_REQUIRED = (
    "template_vertices",
    "faces",
    "shape_basis",
    "expression_basis",
    "pose_basis",
    "joint_regressor",
    "skin_weights",
    "kinematic_parents",
    "theta_canonical",
)


def save_model(model: BodyModel, path: str | Path) -> None:
    model.validate()
    tensors: dict[str, np.ndarray] = {
        "template_vertices": model.template_vertices.numpy(),
        "faces": model.faces.numpy().astype("<i8"),
        "shape_basis": model.shape_basis.numpy(),
        "expression_basis": model.expression_basis.numpy(),
        "pose_basis": model.pose_basis.numpy(),
        "joint_regressor": model.joint_regressor.numpy(),
        "skin_weights": model.skin_weights.numpy(),
        "kinematic_parents": model.kinematic_parents.numpy().astype("<i8"),
        "theta_canonical": model.theta_canonical.numpy(),
    }
    if model.uvs is not None:
        tensors["uvs"] = model.uvs.numpy()
    if model.landmark_vertex_ids is not None:
        tensors["landmark_vertex_ids"] = model.landmark_vertex_ids.numpy().astype("<i8")
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "counts": {
            "n_vertices": model.n_vertices,
            "n_faces": int(model.faces.shape[0]),
            "n_joints": model.n_joints,
            "n_shape": model.n_shape,
            "n_expression": model.n_expression,
            "pose_feature_dim": model.pose_feature_dim,
        },
        "landmark_names": list(model.landmark_names),
    }
    container.write_container(path, manifest, tensors)


def load_model(path: str | Path) -> BodyModel:
    manifest, tensors = container.read_container(path)
    if manifest.get("format") != FORMAT:
        raise LoadError(f"{path}: not a body model container (format={manifest.get('format')!r})")
    if manifest.get("version") != VERSION:
        raise LoadError(
            f"{path}: unsupported bmdl version {manifest.get('version')}; this build reads version {VERSION}"
        )
    for name in _REQUIRED:
        if name not in tensors:
            raise LoadError(f"{path}: missing required tensor '{name}'")

    counts = manifest.get("counts", {})
    n_v = int(counts.get("n_vertices", tensors["template_vertices"].shape[0]))
    if tensors["template_vertices"].shape != (n_v, 3):
        raise LoadError(f"{path}: template_vertices shape {tensors['template_vertices'].shape} != ({n_v}, 3)")

    def t(name: str) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(tensors[name]))

    model = BodyModel(
        template_vertices=t("template_vertices"),
        faces=t("faces"),
        shape_basis=t("shape_basis"),
        expression_basis=t("expression_basis"),
        pose_basis=t("pose_basis"),
        joint_regressor=t("joint_regressor"),
        skin_weights=t("skin_weights"),
        kinematic_parents=t("kinematic_parents"),
        theta_canonical=t("theta_canonical"),
        uvs=t("uvs") if "uvs" in tensors else None,
        landmark_vertex_ids=t("landmark_vertex_ids") if "landmark_vertex_ids" in tensors else None,
        landmark_names=tuple(manifest.get("landmark_names", [])),
    )
    try:
        model.validate()
    except ParameterError as exc:
        raise LoadError(f"{path}: {exc}") from exc
    return model
