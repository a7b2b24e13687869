"""Secondary-component acceptance: protocol conformance for both the bridge
and the client package's synthetic oracle, health metadata, and the latent
codec round-trip PSNR threshold (calibrated against the deployed backend and
recorded in conformance_report.json)."""

import contextlib
import json
from pathlib import Path

import numpy as np
import torch
from fastapi.testclient import TestClient

from guidance_bridge.app import create_app
from guidance_bridge.backends.reference import ReferenceBackend
from guidance_bridge.conformance import HttpTransport, run_suite, write_report

from avatarkit.oracle import SyntheticOracle, linear_critic
from avatarkit.oracle_server import OracleHTTPServer

REPORT_PATH = Path(__file__).resolve().parent.parent / "conformance_report.json"

# Calibration: the deployed backend is the reference codec (block pooling,
# factor 2, exact channel lift).  Measured round-trip PSNR on the probe set
# below is ~31-36 dB; the acceptance threshold leaves a safety margin while
# still catching any lossier regression.  A bridge serving a real VAE should
# recalibrate and re-record.
PSNR_THRESHOLD_DB = 25.0


@contextlib.contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL  {name}", flush=True)
        raise
    print(f"ACCEPTANCE PASS  {name}", flush=True)


class _TCTransport:
    def __init__(self, client):
        self.client = client

    def get(self, path):
        r = self.client.get(path)
        return r.status_code, r.json()

    def post(self, path, body):
        r = self.client.post(path, json=body)
        return r.status_code, r.json()


def _probe_images():
    rng = np.random.default_rng(99)
    images = []
    ys = np.linspace(0, 1, 32)[:, None]
    xs = np.linspace(0, 1, 32)[None, :]
    images.append(np.stack([np.broadcast_to(ys, (32, 32)), np.broadcast_to(xs, (32, 32)),
                            0.5 + 0.4 * np.sin(6 * xs) * np.ones((32, 1))], axis=-1))
    smooth = rng.uniform(size=(8, 8, 3))
    images.append(np.repeat(np.repeat(smooth, 4, axis=0), 4, axis=1))
    images.append(np.clip(0.5 + 0.25 * np.sin(3 * ys + 5 * xs)[..., None] *
                          np.ones((1, 1, 3)), 0, 1))
    return [np.ascontiguousarray(im, dtype=np.float64) for im in images]


def _psnr(a, b):
    mse = float(np.mean((a - b) ** 2))
    return float("inf") if mse == 0 else 10 * np.log10(1.0 / mse)


def test_secondary_acceptance():
    with criterion("bridge + synthetic oracle pass the golden-fixture suite; "
                   "/health advertises the schedule; codec PSNR threshold met"):
        backend = ReferenceBackend()
        client = TestClient(create_app(backend))
        bridge_report = run_suite("testclient://bridge", transport=_TCTransport(client))
        assert bridge_report.passed, json.dumps(bridge_report.to_json(), indent=1)

        health = client.get("/health").json()
        assert {"kind", "num_timesteps", "beta_start", "beta_end"} <= set(health["noise_schedule"])

        oracle = SyntheticOracle(
            critic=linear_critic,
            segmenter=lambda image, keyword, camera: torch.full(
                (image.shape[0], image.shape[1]), 0.5, dtype=torch.float64
            ),
            landmarker=lambda image: {"points": np.zeros((68, 3)), "confidence": np.ones(68)},
        )
        with OracleHTTPServer(oracle) as server:
            synthetic_report = run_suite(server.endpoint, transport=HttpTransport(server.endpoint))
        assert synthetic_report.passed, json.dumps(synthetic_report.to_json(), indent=1)

        psnrs = []
        for img in _probe_images():
            back = backend.decode(backend.encode(img))
            psnrs.append(_psnr(img, back))
        measured = min(psnrs)
        assert measured > PSNR_THRESHOLD_DB, f"round-trip PSNR {measured:.1f} dB"

        write_report(
            bridge_report,
            REPORT_PATH,
            extra={
                "backend": backend.name,
                "synthetic_oracle_suite_passed": synthetic_report.passed,
                "codec_round_trip": {
                    "threshold_db": PSNR_THRESHOLD_DB,
                    "measured_db": [round(p, 2) for p in psnrs],
                    "min_measured_db": round(measured, 2),
                    "probe_images": len(psnrs),
                    "note": "threshold calibrated against the reference codec deployed in this "
                            "environment; recalibrate when serving a real autoencoder",
                },
            },
        )
        assert REPORT_PATH.exists()
