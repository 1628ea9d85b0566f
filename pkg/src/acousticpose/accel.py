"""Kernel backend selection.

Hot numeric kernels in :mod:`acousticpose.kernels` exist in two variants: a
numba ``@njit`` version and a pure-numpy fallback. The active variant is chosen
here. Set the environment variable ``ACOUSTICPOSE_NUMBA=0`` before import to
force the numpy path (useful on machines where numba is unavailable or slow to
JIT); otherwise numba is used whenever it imports cleanly.
"""

from __future__ import annotations

import os

NUMBA_AVAILABLE = False
try:  # pragma: no cover - import guard
    import numba  # noqa: F401

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

_env = os.environ.get("ACOUSTICPOSE_NUMBA", "1")
_BACKEND = "numba" if (NUMBA_AVAILABLE and _env != "0") else "numpy"


def available_backends() -> tuple[str, ...]:
    return ("numpy", "numba") if NUMBA_AVAILABLE else ("numpy",)


def get_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    """Switch the active kernel backend at runtime (mainly for tests/benchmarks)."""
    global _BACKEND
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not importable")
    _BACKEND = name


def set_threads(n: int) -> None:
    """Cap worker threads used by jitted kernels. No-op on the numpy backend."""
    if NUMBA_AVAILABLE and n > 0:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
