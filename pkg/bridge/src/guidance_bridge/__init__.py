"""Guidance bridge: HTTP service adapting generation/segmentation/embedding
models to the avatar pipeline's oracle wire protocol."""

__version__ = "0.1.0"
