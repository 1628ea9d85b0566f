"""Acoustic pose estimation lab: music-driven active sensing, simulation, and training."""

__version__ = "0.1.0"

from .accel import available_backends, get_backend, set_backend

__all__ = ["available_backends", "get_backend", "set_backend", "__version__"]
