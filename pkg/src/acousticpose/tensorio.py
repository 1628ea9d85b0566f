"""Flat binary tensor files with JSON sidecars.

A tensor at ``foo.bin`` is raw little-endian data; ``foo.json`` next to it
records shape, dtype, and optional metadata (channel layout, STFT settings).
The format is deliberately dumb so any tool can read it back.
"""

from __future__ import annotations

import json
import os

import numpy as np

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def sidecar_path(bin_path):
    base, _ = os.path.splitext(str(bin_path))
    return base + ".json"


def save_tensor(bin_path, arr, **meta):
    """Write arr to bin_path plus a JSON sidecar. Extra kwargs land in the sidecar."""
    arr = np.asarray(arr)
    if arr.dtype == np.float64:
        dtype = "float64"
    else:
        arr = arr.astype(np.float32)
        dtype = "float32"
    info = {"shape": list(arr.shape), "dtype": dtype}
    for key, val in meta.items():
        if val is not None:
            info[key] = val
    with open(bin_path, "wb") as f:
        f.write(np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tobytes())
    with open(sidecar_path(bin_path), "w") as f:
        json.dump(info, f, indent=1)
        f.write("\n")


def load_tensor(bin_path):
    """Read a tensor written by save_tensor. Returns (array, sidecar dict)."""
    with open(sidecar_path(bin_path)) as f:
        info = json.load(f)
    dtype = info.get("dtype", "float32")
    if dtype not in _DTYPES:
        raise ValueError(f"{bin_path}: unsupported dtype {dtype!r}")
    raw = np.fromfile(bin_path, dtype=_DTYPES[dtype])
    shape = tuple(info["shape"])
    expected = int(np.prod(shape)) if shape else 1
    if raw.size != expected:
        raise ValueError(
            f"{bin_path}: size mismatch, sidecar says {shape} "
            f"({expected} values) but file holds {raw.size}"
        )
    return raw.reshape(shape).astype(np.dtype(_DTYPES[dtype]).newbyteorder("=")), info
