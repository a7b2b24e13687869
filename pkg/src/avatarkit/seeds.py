"""Deterministic seed derivation: one master seed fans out to named streams."""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(master: int, *stream: str | int) -> int:
    """Collision-resistant 63-bit seed for the named stream."""
    digest = hashlib.sha256(repr((int(master),) + tuple(stream)).encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


def torch_generator(master: int, *stream: str | int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(master, *stream))
    return gen


def np_rng(master: int, *stream: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *stream))
