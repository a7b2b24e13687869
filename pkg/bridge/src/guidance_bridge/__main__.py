"""Run the bridge: ``python -m guidance_bridge``.

Environment: BRIDGE_PORT (default 8601), BRIDGE_HOST, BRIDGE_BACKEND
("reference" or "pretrained"), plus the model-path variables read by
PretrainedBackend.from_env for the pretrained backend.
"""

import os

import uvicorn

from .app import create_app
from .backends.reference import ReferenceBackend


def main():
    kind = os.environ.get("BRIDGE_BACKEND", "reference")
    if kind == "pretrained":
        from .backends.pretrained import PretrainedBackend

        backend = PretrainedBackend.from_env()
    elif kind == "reference":
        backend = ReferenceBackend()
    else:
        raise SystemExit(f"unknown BRIDGE_BACKEND {kind!r}")
    app = create_app(backend)
    uvicorn.run(app, host=os.environ.get("BRIDGE_HOST", "127.0.0.1"),
                port=int(os.environ.get("BRIDGE_PORT", "8601")))


if __name__ == "__main__":
    main()
