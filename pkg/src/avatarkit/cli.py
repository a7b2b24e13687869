"""Pipeline orchestration CLI.

One subcommand per stage (fit, paint, learn, refine, compose, render,
animate) over a workspace directory.  Stages check their prerequisites,
write artifacts atomically, and re-running a completed stage with the same
config and inputs is a no-op.  Exit codes: 0 ok, 2 config, 3 prerequisite,
4 oracle, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import png16, toy
from .body import AvatarParams, skin_mesh
from .body_io import load_model, save_model
from .camera import Camera
from .compose import AvatarRig, attach, load_avatar, render_avatar, save_avatar
from .component import load_component, save_component
from .config import PipelineConfig
from .errors import (
    AvatarKitError,
    ConfigurationError,
    LoadError,
    NumericError,
    OracleError,
    ParameterError,
    PrerequisiteError,
    StageError,
)
from .http_oracle import HttpOracle
from .image import to_uint8
from .landmarks import LandmarkSet, fit_shape, load_landmarks, save_landmarks
from .procedural import ShellGuidance, ShellSpec
from .seeds import derive_seed
from .texture import TextureMap, paint_texture
from .training import refine_component, train_component
from .texture import raster_geometry, rasterize
from .raycast import build_bvh

STAGES = ("fit", "paint", "learn", "refine", "compose", "render", "animate")

# Which config sections feed each stage's no-op hash.
_STAGE_SECTIONS = {
    "fit": ("master_seed", "model", "landmarks_path", "fit"),
    "paint": ("master_seed", "model", "prompt", "oracle", "paint"),
    "learn": ("master_seed", "model", "prompt", "part_keywords", "oracle", "learn"),
    "refine": ("master_seed", "model", "prompt", "part_keywords", "oracle", "refine"),
    "compose": ("master_seed", "model", "prompt", "part_keywords"),
    "render": ("master_seed", "render"),
    "animate": ("master_seed", "animate"),
}

_PREREQ = {
    "paint": ("fit",),
    "learn": ("fit", "paint"),
    "refine": ("fit", "paint", "learn"),
    "compose": ("fit", "paint"),
    "render": ("compose",),
    "animate": ("compose",),
}


class Workspace:
    def __init__(self, root: Path, json_logs: bool = False):
        self.root = root
        self.json_logs = json_logs
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / ".stages").mkdir(exist_ok=True)

    def log(self, event: str, **fields):
        if self.json_logs:
            print(json.dumps({"event": event, **fields}))
        else:
            detail = " ".join(f"{k}={v}" for k, v in fields.items())
            print(f"[{event}] {detail}")

    def stage_dir(self, stage: str) -> Path:
        path = self.root / stage
        path.mkdir(exist_ok=True)
        return path

    def state_path(self, stage: str) -> Path:
        return self.root / ".stages" / f"{stage}.json"

    def stage_done(self, stage: str) -> bool:
        return self.state_path(stage).exists()

    def read_state(self, stage: str) -> dict:
        return json.loads(self.state_path(stage).read_text())

    def write_state(self, stage: str, config_hash: str, inputs: dict[str, str], outputs: list[str]):
        tmp = self.state_path(stage).with_suffix(".tmp")
        tmp.write_text(
            json.dumps(
                {"config_hash": config_hash, "inputs": inputs, "outputs": outputs}, sort_keys=True, indent=1
            )
        )
        tmp.replace(self.state_path(stage))

    def check_prereqs(self, stage: str):
        for dep in _PREREQ.get(stage, ()):
            if not self.stage_done(dep):
                raise PrerequisiteError(f"stage '{dep}' required before '{stage}'", stage=stage)

    def lock(self):
        path = self.root / ".lock"
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigurationError(
                f"workspace {self.root} is locked by another run (remove {path} if stale)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return path


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _resolve_model(config: PipelineConfig, ws: Workspace):
    m = config.data["model"]
    model_path = ws.root / "model.bmdl"
    if m["source"] == "file":
        if not m["path"]:
            raise ConfigurationError("model.source is 'file' but model.path is empty")
        return load_model(m["path"]), Path(m["path"])
    if not model_path.exists():
        if m["source"] == "toy-head":
            model = toy.head_model(n_lat=int(m["n_lat"]), n_lon=int(m["n_lon"]), seed=int(m["toy_seed"]))
        elif m["source"] == "toy-cylinder":
            model = toy.cylinder_model(seed=int(m["toy_seed"]))
        else:
            raise ConfigurationError(f"unknown model.source {m['source']!r}")
        save_model(model, model_path)
    return load_model(model_path), model_path


def _load_fitted(config: PipelineConfig, ws: Workspace, model) -> AvatarParams:
    params_path = ws.stage_dir("fit") / "params.json"
    data = json.loads(params_path.read_text())
    return AvatarParams(
        beta=torch.tensor(data["beta"], dtype=torch.float64),
        theta=torch.tensor(data["theta"], dtype=torch.float64),
        psi=torch.tensor(data["psi"], dtype=torch.float64),
    )


def _avatar(config: PipelineConfig, ws: Workspace):
    model, _ = _resolve_model(config, ws)
    params = _load_fitted(config, ws, model)
    texture = TextureMap.load(ws.stage_dir("paint") / "texture.png")
    return AvatarRig(model=model, params=params, texture=texture,
                     provenance={"prompt": config.data["prompt"], "master_seed": config.data["master_seed"]})


def _oracle(config: PipelineConfig, ws: Workspace, avatar: AvatarRig | None = None):
    mode = config.data["oracle"]["mode"]
    if mode == "bridge":
        endpoint = os.environ.get("AVATARKIT_ORACLE_ENDPOINT") or config.data["oracle"]["endpoint"]
        if not endpoint:
            raise ConfigurationError(
                "oracle.mode is 'bridge' but no endpoint configured (oracle.endpoint or "
                "AVATARKIT_ORACLE_ENDPOINT)"
            )
        return HttpOracle(endpoint)
    if mode != "synthetic":
        raise ConfigurationError(f"unknown oracle.mode {config.data['oracle']['mode']!r}")
    syn = config.data["oracle"]["synthetic"]
    shell = ShellSpec(
        center=tuple(syn["shell"]["center"]),
        r_inner=float(syn["shell"]["r_inner"]),
        r_outer=float(syn["shell"]["r_outer"]),
        density=float(syn["shell"]["density"]),
        color=tuple(syn["shell"]["color"]),
    )
    if avatar is None:
        model, _ = _resolve_model(config, ws)
        avatar = AvatarRig(
            model=model,
            params=AvatarParams.zeros(model),
            texture=TextureMap.blank(int(config.data["paint"]["uv_size"])),
        )
    guide = ShellGuidance(
        avatar,
        shell,
        latent_size=int(config.data["learn"]["latent_size"]),
        n_samples=int(config.data["learn"]["n_samples"]),
        codec_factor=int(syn["codec_factor"]),
    )
    return guide.oracle()


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------

def stage_fit(config: PipelineConfig, ws: Workspace) -> list[str]:
    model, model_path = _resolve_model(config, ws)
    seed = derive_seed(config.data["master_seed"], "fit")
    lm_path = config.data["landmarks_path"]
    synth_beta = config.data["fit"]["synthesize_from_beta"]
    out_dir = ws.stage_dir("fit")

    if lm_path:
        landmarks = load_landmarks(lm_path, model)
    else:
        # No landmark file: synthesize targets from configured coefficients
        # (toy pipelines), defaulting to a seeded sparse coefficient draw.
        beta_gt = torch.zeros(model.n_shape, dtype=torch.float64)
        if synth_beta:
            vals = torch.tensor([float(x) for x in synth_beta], dtype=torch.float64)
            beta_gt[: len(vals)] = vals
        else:
            rng = np.random.default_rng(seed)
            idx = rng.choice(model.n_shape, size=min(10, model.n_shape), replace=False)
            beta_gt[idx] = torch.from_numpy(rng.normal(size=len(idx)) * 0.5)
        gt = AvatarParams(beta=beta_gt, theta=model.theta_canonical.clone(),
                          psi=torch.zeros(model.n_expression, dtype=torch.float64))
        posed = skin_mesh(model, gt)
        ids = model.landmark_vertex_ids
        if ids is None:
            raise ConfigurationError("model has no landmark correspondence table")
        landmarks = LandmarkSet(
            points=posed.vertices[ids],
            vertex_ids=ids,
            confidence=torch.ones(len(ids), dtype=torch.float64),
        )
        save_landmarks(landmarks, out_dir / "landmarks.json", model)

    result = fit_shape(model, landmarks, config.fit_config())
    payload = {
        "beta": result.params.beta.tolist(),
        "theta": result.params.theta.tolist(),
        "psi": result.params.psi.tolist(),
        "final_loss": result.final_loss,
        "iterations": result.iterations,
        "converged": result.converged,
    }
    tmp = out_dir / "params.json.tmp"
    tmp.write_text(json.dumps(payload, indent=1))
    tmp.replace(out_dir / "params.json")
    return ["fit/params.json"]


def stage_paint(config: PipelineConfig, ws: Workspace) -> list[str]:
    model, _ = _resolve_model(config, ws)
    params = _load_fitted(config, ws, model)
    mesh = skin_mesh(model, params)
    avatar_stub = AvatarRig(model=model, params=params,
                            texture=TextureMap.blank(int(config.data["paint"]["uv_size"])))
    oracle = _oracle(config, ws, avatar_stub)
    schedule = config.paint_schedule()
    p = config.data["paint"]
    texture = paint_texture(
        mesh,
        schedule,
        oracle,
        config.data["prompt"],
        uv_size=int(p["uv_size"]),
        lr=float(p["learning_rate"]),
        steps=int(p["steps"]),
        tolerance=float(p["tolerance"]),
        sym_weight=float(p["symmetry_weight"]),
        seed=derive_seed(config.data["master_seed"], "paint"),
        resume_dir=ws.stage_dir("paint") / "progress",
    )
    texture.save(ws.stage_dir("paint") / "texture.png",
                 extra={"schedule_hash": schedule.content_hash()})
    return ["paint/texture.png"]


def stage_learn(config: PipelineConfig, ws: Workspace) -> list[str]:
    avatar = _avatar(config, ws)
    oracle = _oracle(config, ws, avatar)
    outputs = []
    out_dir = ws.stage_dir("learn")
    for keyword in config.data["part_keywords"]:
        seed = derive_seed(config.data["master_seed"], "learn", keyword)
        log_path = out_dir / f"{keyword}.log.jsonl"
        cfg = config.train_config(seed, log_path=str(log_path), checkpoint_dir=str(out_dir))
        component = train_component(avatar, config.data["prompt"], keyword, oracle, cfg)
        save_component(component, out_dir / f"{keyword}.rfc")
        outputs += [f"learn/{keyword}.rfc", f"learn/{keyword}.log.jsonl"]
    return outputs


def _calibration_pairs(config: PipelineConfig, avatar: AvatarRig, oracle, n_views: int):
    """Latent/RGB pairs from rasterized views (adapter initialization)."""
    mesh = skin_mesh(avatar.model, avatar.params)
    bvh = build_bvh(mesh)
    factor = oracle.codec_factor()
    latent_size = int(config.data["learn"]["latent_size"])
    pairs = []
    for i in range(n_views):
        cam = Camera(azimuth_deg=360.0 * i / n_views, elevation_deg=10.0, distance=2.2,
                     width=latent_size * factor, height=latent_size * factor)
        rgb = rasterize(avatar.texture, cam, mesh, geom=raster_geometry(mesh, cam, bvh))
        latent = oracle.encode(rgb.data)
        f = factor
        h, w = rgb.data.shape[:2]
        pooled = rgb.data.reshape(h // f, f, w // f, f, 3).mean(dim=(1, 3))
        pairs.append((latent, pooled))
    return pairs


def stage_refine(config: PipelineConfig, ws: Workspace) -> list[str]:
    avatar = _avatar(config, ws)
    oracle = _oracle(config, ws, avatar)
    outputs = []
    out_dir = ws.stage_dir("refine")
    pairs = _calibration_pairs(config, avatar, oracle, int(config.data["refine"]["calibration_views"]))
    for keyword in config.data["part_keywords"]:
        component = load_component(ws.stage_dir("learn") / f"{keyword}.rfc")
        seed = derive_seed(config.data["master_seed"], "refine", keyword)
        log_path = out_dir / f"{keyword}.log.jsonl"
        cfg = config.refine_config(seed, tuple(pairs), log_path=str(log_path))
        refined = refine_component(component, avatar, config.data["prompt"], oracle, cfg)
        save_component(refined, out_dir / f"{keyword}.rfc")
        outputs += [f"refine/{keyword}.rfc", f"refine/{keyword}.log.jsonl"]
    return outputs


def stage_compose(config: PipelineConfig, ws: Workspace) -> list[str]:
    avatar = _avatar(config, ws)
    for keyword in config.data["part_keywords"]:
        refined = ws.stage_dir("refine") / f"{keyword}.rfc"
        learned = ws.stage_dir("learn") / f"{keyword}.rfc"
        source = refined if refined.exists() else (learned if learned.exists() else None)
        if source is not None:
            avatar = attach(avatar, load_component(source))
    save_avatar(avatar, ws.stage_dir("compose") / "avatar")
    return ["compose/avatar/rig.json"]


def _writable_components(avatar: AvatarRig) -> AvatarRig:
    # Latent components without adapters cannot composite to RGB; drop them.
    kept = tuple(
        a for a in avatar.components if not (a.component.channel_mode == 4 and not a.component.has_adapter)
    )
    if len(kept) != len(avatar.components):
        import dataclasses

        avatar = dataclasses.replace(avatar, components=kept)
    return avatar


def stage_render(config: PipelineConfig, ws: Workspace) -> list[str]:
    avatar = _writable_components(load_avatar(ws.stage_dir("compose") / "avatar"))
    r = config.data["render"]
    outputs = []
    for i, az in enumerate(r["azimuths"]):
        cam = Camera(azimuth_deg=float(az), elevation_deg=float(r["elevation"]),
                     distance=float(r["distance"]), width=int(r["size"]), height=int(r["size"]))
        img = render_avatar(avatar, cam, n_samples=int(r["n_samples"]),
                            seed=derive_seed(config.data["master_seed"], "render", i))
        out = ws.stage_dir("render") / f"view_{i:02d}.png"
        png16.write_png(out, to_uint8(img.data))
        outputs.append(f"render/view_{i:02d}.png")
    return outputs


def stage_animate(config: PipelineConfig, ws: Workspace) -> list[str]:
    avatar = _writable_components(load_avatar(ws.stage_dir("compose") / "avatar"))
    a = config.data["animate"]
    n_frames = int(a["frames"])
    outputs = []
    cam = Camera(width=int(a["size"]), height=int(a["size"]), distance=2.2, elevation_deg=5.0)
    n_k = avatar.model.n_joints
    for i in range(n_frames):
        phase = i / max(n_frames - 1, 1)
        theta = avatar.params.theta.clone()
        # Rotate the last joint (the head) around y.
        angle = np.radians(float(a["max_rotation_deg"])) * np.sin(2 * np.pi * phase)
        theta[3 * (n_k - 1) + 1] = angle
        psi = avatar.params.psi.clone()
        if len(psi):
            psi[0] = float(a["expression_scale"]) * np.sin(np.pi * phase)
        img = render_avatar(avatar, cam, theta=theta, psi=psi, n_samples=int(a["n_samples"]),
                            seed=derive_seed(config.data["master_seed"], "animate", i))
        out = ws.stage_dir("animate") / f"frame_{i:02d}.png"
        png16.write_png(out, to_uint8(img.data))
        outputs.append(f"animate/frame_{i:02d}.png")
    return outputs


_STAGE_FN = {
    "fit": stage_fit,
    "paint": stage_paint,
    "learn": stage_learn,
    "refine": stage_refine,
    "compose": stage_compose,
    "render": stage_render,
    "animate": stage_animate,
}


_OPTIONAL_INPUTS = {"compose": ("learn", "refine")}  # consumed when present


def _stage_inputs(stage: str, ws: Workspace) -> dict[str, str]:
    """Hashes of the artifacts this stage consumes (for no-op detection)."""
    inputs = {}
    for dep in _PREREQ.get(stage, ()) + _OPTIONAL_INPUTS.get(stage, ()):
        state_path = ws.state_path(dep)
        if state_path.exists():
            inputs[f".stages/{dep}.json"] = _hash_file(state_path)
    return inputs


def run_stage(stage: str, config: PipelineConfig, ws: Workspace, force: bool = False) -> int:
    if stage not in STAGES:
        raise ConfigurationError(f"unknown stage {stage!r}; expected one of {STAGES}")
    ws.check_prereqs(stage)
    config_hash = config.content_hash(*_STAGE_SECTIONS[stage])
    inputs = _stage_inputs(stage, ws)
    if not force and ws.stage_done(stage):
        state = ws.read_state(stage)
        if state.get("config_hash") == config_hash and state.get("inputs") == inputs:
            ws.log("stage-skipped", stage=stage, reason="artifacts up to date")
            return 0
    lock = ws.lock()
    try:
        ws.log("stage-start", stage=stage)
        outputs = _STAGE_FN[stage](config, ws)
        ws.write_state(stage, config_hash, inputs, outputs)
        ws.log("stage-done", stage=stage, outputs=outputs)
    finally:
        lock.unlink(missing_ok=True)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="avatarkit", description="Compositional avatar pipeline")
    parser.add_argument("stage", choices=STAGES + ("all",), help="pipeline stage to run")
    parser.add_argument("--workspace", "-w", default=".", help="workspace directory")
    parser.add_argument("--config", "-c", default=None, help="pipeline config JSON")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        help="override config values: key.path=value (repeatable)")
    parser.add_argument("--json", action="store_true", help="machine-readable logs")
    parser.add_argument("--force", action="store_true", help="re-run even if artifacts are current")
    args = parser.parse_args(argv)

    try:
        config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        for assignment in args.overrides:
            config.apply_override(assignment)
        ws = Workspace(Path(args.workspace), json_logs=args.json)
        stages = STAGES if args.stage == "all" else (args.stage,)
        for stage in stages:
            code = run_stage(stage, config, ws, force=args.force)
            if code != 0:
                return code
        return 0
    except PrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OracleError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except (ConfigurationError, LoadError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AvatarKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
