"""Backend interface: numpy in, numpy out, one method per capability.

A backend may load only a subset of capabilities; the app answers 501 for
the rest.  All generation randomness must derive from client-supplied
seeds so responses are reproducible.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np


class CapabilityNotLoaded(Exception):
    pass


class Backend(Protocol):
    name: str

    def capabilities(self) -> set[str]: ...

    def schedule_info(self) -> dict: ...

    def codec_info(self) -> dict: ...

    def generate(self, prompt: str, height: int, width: int, seed: int,
                 depth: np.ndarray | None, current: np.ndarray | None,
                 known_mask: np.ndarray | None, extras: dict) -> np.ndarray: ...

    def denoise(self, q_t: np.ndarray, prompt: str, t: int, mode: str, extras: dict) -> tuple[np.ndarray, float]: ...

    def segment(self, image: np.ndarray, keyword: str, extras: dict) -> np.ndarray: ...

    def embed_image(self, image: np.ndarray, text: str | None, with_similarity_grad: bool) -> dict: ...

    def embed_text(self, text: str) -> np.ndarray: ...

    def encode(self, image: np.ndarray) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...

    def landmarks(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...
