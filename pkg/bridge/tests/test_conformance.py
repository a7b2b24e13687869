import json

import numpy as np
import torch
from fastapi.testclient import TestClient

from guidance_bridge.app import create_app
from guidance_bridge.backends.reference import ReferenceBackend
from guidance_bridge.conformance import HttpTransport, load_fixtures, run_suite

# The synthetic oracle lives in the client package; the suite talks to it
# over the same HTTP surface it uses for a real bridge.
from avatarkit.oracle import SyntheticOracle, linear_critic
from avatarkit.oracle_server import OracleHTTPServer


class _ClientTransport:
    """Conformance transport over FastAPI's in-process test client."""

    def __init__(self, client: TestClient):
        self.client = client

    def get(self, path):
        r = self.client.get(path)
        return r.status_code, r.json()

    def post(self, path, body):
        r = self.client.post(path, json=body)
        try:
            return r.status_code, r.json()
        except json.JSONDecodeError:
            return r.status_code, {}


def synthetic_oracle():
    return SyntheticOracle(
        critic=linear_critic,
        segmenter=lambda image, keyword, camera: torch.full(
            (image.shape[0], image.shape[1]), 0.5, dtype=torch.float64
        ),
        landmarker=lambda image: {"points": np.zeros((68, 3)), "confidence": np.ones(68)},
    )


def test_fixture_corpus_covers_every_capability():
    fixtures = load_fixtures()
    positive = {f["capability"] for f in fixtures if not f.get("expect_error")}
    from guidance_bridge import wire

    assert positive == set(wire.CAPABILITIES)
    assert any(f.get("expect_error") for f in fixtures)


def test_reference_backend_passes_suite(tmp_path):
    client = TestClient(create_app(ReferenceBackend()))
    report = run_suite("testclient://bridge", transport=_ClientTransport(client))
    assert report.passed, json.dumps(report.to_json(), indent=1)
    assert any("noise schedule" in c.name and c.ok for c in report.checks)


def test_synthetic_oracle_passes_same_suite():
    with OracleHTTPServer(synthetic_oracle()) as server:
        report = run_suite(server.endpoint, transport=HttpTransport(server.endpoint))
    assert report.passed, json.dumps(report.to_json(), indent=1)


def test_suite_flags_missing_response_field():
    # A server that drops u_t from denoise responses must fail conformance
    # with a check naming the field.
    backend = ReferenceBackend()
    app = create_app(backend)
    client = TestClient(app)

    class DroppingTransport(_ClientTransport):
        def post(self, path, body):
            status, payload = super().post(path, body)
            if path == "/denoise" and payload.get("ok"):
                payload["result"]["params"].pop("u_t", None)
            return status, payload

    report = run_suite("testclient://dropping", transport=DroppingTransport(client))
    assert not report.passed
    failing = [c for c in report.checks if not c.ok]
    assert any("u_t" in c.detail for c in failing)


def test_suite_flags_schema_drift_in_shapes():
    backend = ReferenceBackend()
    client = TestClient(create_app(backend))

    class WrongShapeTransport(_ClientTransport):
        def post(self, path, body):
            status, payload = super().post(path, body)
            if path == "/segment" and payload.get("ok"):
                from guidance_bridge import wire

                mask = wire.decode_tensor(payload["result"]["tensors"]["mask"], "mask")
                payload["result"]["tensors"]["mask"] = wire.encode_tensor(mask[:-1])
            return status, payload

    report = run_suite("testclient://wrongshape", transport=WrongShapeTransport(client))
    assert not report.passed
