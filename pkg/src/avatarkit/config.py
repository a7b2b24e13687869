"""Declarative pipeline configuration.

One JSON document drives every stage; defaults mirror the published
hyperparameters (view count, sample counts, loss weights, learning rates).
Unknown keys are rejected so typos fail loudly, and the merged config
round-trips unchanged through serialization.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

from .canonical import CanonicalFrame
from .errors import ConfigurationError
from .field import FieldConfig
from .landmarks import FitConfig
from .losses import LossWeights
from .texture import ViewSchedule
from .training import CameraDistribution, RefineConfig, TrainConfig

DEFAULTS: dict[str, Any] = {
    "master_seed": 0,
    "prompt": "a person",
    "part_keywords": ["hair"],
    "oracle": {
        "mode": "synthetic",  # synthetic | bridge
        "endpoint": "",  # bridge URL; AVATARKIT_ORACLE_ENDPOINT overrides
        "synthetic": {
            "codec_factor": 2,
            "shell": {
                "center": [0.0, 0.30, 0.0],
                "r_inner": 0.18,
                "r_outer": 0.32,
                "density": 40.0,
                "color": [0.8, 0.3, 0.2],
            },
        },
    },
    "model": {
        "source": "toy-head",  # toy-head | toy-cylinder | file
        "path": "",
        "toy_seed": 0,
        "n_lat": 13,
        "n_lon": 18,
    },
    "landmarks_path": "",
    "fit": {
        "max_iters": 2000,
        "learning_rate": 0.001,
        "lr_decay": 1.0,
        "reg_weight_shape": 5e-5,
        "reg_weight_expression": 5e-5,
        "tolerance": 1e-9,
        "optimize_pose": True,
        "optimize_expression": True,
        "synthesize_from_beta": [],  # toy runs: make targets from these coefficients
    },
    "paint": {
        "uv_size": 512,
        "render_size": 512,
        "n_views": 10,
        "distance": 2.2,
        "fov_deg": 45.0,
        "steps": 200,
        "learning_rate": 0.01,
        "tolerance": 1e-5,
        "symmetry_weight": 0.5,
    },
    "learn": {
        "iterations": 2000,
        "learning_rate": 0.001,
        "latent_size": 64,
        "n_samples": 96,
        "seg_cadence": 10,
        "t_anneal_fraction": 0.2,
        "checkpoint_every": 500,
        "retries": 2,
        "weights": {"mask": 0.1, "sparsity": 0.0005, "similarity": 1.0, "symmetry": 0.5},
        "field": {"hidden": 128, "pos_bands": 10, "dir_bands": 4, "density_bias": 0.0},
        "frame": {"n_neighbors": 6, "tau": 0.1, "cutoff": 0.5},
        "camera": {
            "elevation_range": [-10.0, 30.0],
            "distance": 2.2,
            "distance_jitter": 0.1,
            "fov_deg": 45.0,
        },
    },
    "refine": {
        "iterations": 500,
        "learning_rate": 0.001,
        "rgb_size": 480,
        "n_samples": 128,
        "seg_cadence": 10,
        "t_anneal_fraction": 0.2,
        "retries": 2,
        "calibration_views": 4,
        "train_adapter": True,
        "weights": {"mask": 0.1, "sparsity": 0.0005, "similarity": 1.0, "symmetry": 0.5},
        "camera": {
            "elevation_range": [-10.0, 30.0],
            "distance": 2.2,
            "distance_jitter": 0.1,
            "fov_deg": 45.0,
        },
    },
    "render": {"size": 512, "n_samples": 64, "azimuths": [0.0, 60.0, 180.0, 300.0], "elevation": 5.0,
               "distance": 2.2},
    "animate": {
        "size": 256,
        "n_samples": 48,
        "frames": 4,
        "max_rotation_deg": 25.0,
        "expression_scale": 0.8,
    },
}


def _merge(defaults: Any, override: Any, path: str, problems: list[str]) -> Any:
    if isinstance(defaults, dict):
        if not isinstance(override, dict):
            problems.append(f"{path or 'config'}: expected an object")
            return copy.deepcopy(defaults)
        merged = {}
        for key, dval in defaults.items():
            if key in override:
                merged[key] = _merge(dval, override[key], f"{path}.{key}".lstrip("."), problems)
            else:
                merged[key] = copy.deepcopy(dval)
        for key in override:
            if key not in defaults:
                problems.append(f"unknown config key: {f'{path}.{key}'.lstrip('.')}")
        return merged
    # Leaves: light type checking, ints may stand in for floats.
    if isinstance(defaults, bool) and not isinstance(override, bool):
        problems.append(f"{path}: expected true/false")
        return defaults
    if isinstance(defaults, (int, float)) and not isinstance(defaults, bool):
        if not isinstance(override, (int, float)) or isinstance(override, bool):
            problems.append(f"{path}: expected a number")
            return defaults
        return override
    if isinstance(defaults, str) and not isinstance(override, str):
        problems.append(f"{path}: expected a string")
        return defaults
    if isinstance(defaults, list) and not isinstance(override, list):
        problems.append(f"{path}: expected a list")
        return defaults
    return copy.deepcopy(override)


class PipelineConfig:
    """Validated, fully merged configuration tree."""

    def __init__(self, data: dict | None = None):
        problems: list[str] = []
        self.data = _merge(DEFAULTS, data or {}, "", problems)
        if problems:
            raise ConfigurationError("config validation failed:\n  " + "\n  ".join(problems))

    @staticmethod
    def load(path: str | Path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        return PipelineConfig(raw)

    def to_json(self) -> dict:
        return copy.deepcopy(self.data)

    def content_hash(self, *sections: str) -> str:
        tree = {s: self.data[s] for s in sections} if sections else self.data
        blob = json.dumps(tree, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def apply_override(self, assignment: str) -> None:
        """Apply one --set key.path=value override (value parsed as JSON,
        falling back to a bare string)."""
        if "=" not in assignment:
            raise ConfigurationError(f"--set expects key.path=value, got {assignment!r}")
        key_path, raw_value = assignment.split("=", 1)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        node = self.data
        keys = key_path.split(".")
        tree = DEFAULTS
        for key in keys[:-1]:
            if not isinstance(tree, dict) or key not in tree:
                raise ConfigurationError(f"unknown config key: {key_path}")
            tree = tree[key]
            node = node.setdefault(key, {})
        leaf = keys[-1]
        if not isinstance(tree, dict) or leaf not in tree:
            raise ConfigurationError(f"unknown config key: {key_path}")
        problems: list[str] = []
        node[leaf] = _merge(tree[leaf], value, key_path, problems)
        if problems:
            raise ConfigurationError("config validation failed:\n  " + "\n  ".join(problems))

    # -- typed accessors ------------------------------------------------

    def fit_config(self) -> FitConfig:
        f = self.data["fit"]
        return FitConfig(
            max_iters=int(f["max_iters"]),
            learning_rate=float(f["learning_rate"]),
            lr_decay=float(f["lr_decay"]),
            reg_weight_shape=float(f["reg_weight_shape"]),
            reg_weight_expression=float(f["reg_weight_expression"]),
            tolerance=float(f["tolerance"]),
            optimize_pose=bool(f["optimize_pose"]),
            optimize_expression=bool(f["optimize_expression"]),
        )

    def paint_schedule(self) -> ViewSchedule:
        p = self.data["paint"]
        return ViewSchedule.default(
            n_views=int(p["n_views"]),
            distance=float(p["distance"]),
            fov_deg=float(p["fov_deg"]),
            size=int(p["render_size"]),
        )

    def _weights(self, section: str) -> LossWeights:
        w = self.data[section]["weights"]
        return LossWeights(
            mask=float(w["mask"]),
            sparsity=float(w["sparsity"]),
            similarity=float(w["similarity"]),
            symmetry=float(w["symmetry"]),
        )

    def _camera(self, section: str) -> CameraDistribution:
        c = self.data[section]["camera"]
        return CameraDistribution(
            elevation_range=tuple(float(x) for x in c["elevation_range"]),
            distance=float(c["distance"]),
            distance_jitter=float(c["distance_jitter"]),
            fov_deg=float(c["fov_deg"]),
        )

    def train_config(self, seed: int, log_path: str | None = None,
                     checkpoint_dir: str | None = None) -> TrainConfig:
        l = self.data["learn"]
        return TrainConfig(
            iterations=int(l["iterations"]),
            learning_rate=float(l["learning_rate"]),
            latent_size=int(l["latent_size"]),
            n_samples=int(l["n_samples"]),
            seg_cadence=int(l["seg_cadence"]),
            t_anneal_fraction=float(l["t_anneal_fraction"]),
            weights=self._weights("learn"),
            field=FieldConfig(
                channels=4,
                hidden=int(l["field"]["hidden"]),
                pos_bands=int(l["field"]["pos_bands"]),
                dir_bands=int(l["field"]["dir_bands"]),
                density_bias=float(l["field"]["density_bias"]),
                seed=seed,
            ),
            frame=CanonicalFrame(
                n_neighbors=int(l["frame"]["n_neighbors"]),
                tau=float(l["frame"]["tau"]),
                cutoff=float(l["frame"]["cutoff"]),
            ),
            camera=self._camera("learn"),
            seed=seed,
            retries=int(l["retries"]),
            log_path=log_path,
            checkpoint_dir=checkpoint_dir,
            checkpoint_every=int(l["checkpoint_every"]),
        )

    def refine_config(self, seed: int, calibration_pairs, log_path: str | None = None) -> RefineConfig:
        r = self.data["refine"]
        return RefineConfig(
            iterations=int(r["iterations"]),
            learning_rate=float(r["learning_rate"]),
            rgb_size=int(r["rgb_size"]),
            n_samples=int(r["n_samples"]),
            seg_cadence=int(r["seg_cadence"]),
            t_anneal_fraction=float(r["t_anneal_fraction"]),
            weights=self._weights("refine"),
            camera=self._camera("refine"),
            seed=seed,
            retries=int(r["retries"]),
            log_path=log_path,
            train_adapter=bool(r["train_adapter"]),
            calibration_pairs=calibration_pairs,
        )
