from .base import Backend, CapabilityNotLoaded
from .reference import ReferenceBackend

__all__ = ["Backend", "CapabilityNotLoaded", "ReferenceBackend"]
