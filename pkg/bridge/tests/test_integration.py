"""Cross-package integration: the avatar pipeline's HTTP oracle client and
CLI driving a live bridge server over real HTTP."""

import json
import socket
import threading
import time

import pytest
import torch
import uvicorn

from guidance_bridge.app import create_app
from guidance_bridge.backends.reference import ReferenceBackend

from avatarkit.http_oracle import HttpOracle
from avatarkit.losses import sds_gradient


@pytest.fixture(scope="module")
def bridge_server():
    port = _free_port()
    config = uvicorn.Config(create_app(ReferenceBackend()), host="127.0.0.1", port=port,
                            log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("bridge server failed to start")
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_http_oracle_full_surface(bridge_server):
    oracle = HttpOracle(bridge_server)
    assert oracle.schedule().num_timesteps == 1000
    assert oracle.codec_factor() == 2

    img = oracle.generate("a person", (8, 8), seed=3)
    assert img.shape == (8, 8, 3)

    gen = torch.Generator().manual_seed(0)
    render = torch.rand(6, 6, 4, generator=gen, dtype=torch.float64)
    result = sds_gradient(render, "a hat", oracle, gen)
    assert result.grad.shape == render.shape
    assert torch.isfinite(result.grad).all()

    mask = oracle.segment(img, "hair")
    assert mask.shape == (8, 8)

    z_img = oracle.embed_image(img, text="a hat", with_similarity_grad=True)
    assert z_img.similarity_grad is not None

    latent = oracle.encode(torch.rand(8, 8, 3, dtype=torch.float64))
    assert latent.shape == (4, 4, 4)
    back = oracle.decode(latent)
    assert back.shape == (8, 8, 3)


def test_cli_stage_through_bridge(bridge_server, tmp_path, monkeypatch):
    # fit has no oracle dependency; paint generates via the live bridge.
    from avatarkit.cli import main

    config = {
        "master_seed": 5,
        "prompt": "portrait",
        "oracle": {"mode": "bridge"},
        "model": {"source": "toy-head", "n_lat": 9, "n_lon": 12},
        "fit": {"max_iters": 60, "learning_rate": 0.05, "optimize_pose": False,
                "optimize_expression": False},
        "paint": {"uv_size": 16, "render_size": 16, "steps": 15, "learning_rate": 0.05},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    monkeypatch.setenv("AVATARKIT_ORACLE_ENDPOINT", bridge_server)
    ws = tmp_path / "ws"
    assert main(["fit", "-w", str(ws), "-c", str(cfg_path)]) == 0
    assert main(["paint", "-w", str(ws), "-c", str(cfg_path)]) == 0
    assert (ws / "paint" / "texture.png").exists()


def test_bridge_mode_without_endpoint_is_config_error(tmp_path, monkeypatch):
    from avatarkit.cli import main

    monkeypatch.delenv("AVATARKIT_ORACLE_ENDPOINT", raising=False)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps({
        "oracle": {"mode": "bridge"},
        "model": {"source": "toy-head", "n_lat": 9, "n_lon": 12},
        "fit": {"max_iters": 10},
    }))
    ws = tmp_path / "ws"
    assert main(["fit", "-w", str(ws), "-c", str(cfg_path)]) == 0  # fit needs no oracle
    assert main(["paint", "-w", str(ws), "-c", str(cfg_path)]) == 2
