"""Minimal RIFF/WAVE reader and writer.

Supports the formats this project exchanges: 16-bit PCM, 24-bit PCM, and
32-bit IEEE float, any channel count. Data is exposed as float arrays of
shape [samples, channels] scaled to [-1, 1] for the PCM encodings.
"""

from __future__ import annotations

import struct

import numpy as np

_FMT_PCM = 1
_FMT_FLOAT = 3


def write_wav(path, data, sample_rate, encoding="pcm16"):
    """Write [samples, channels] float data. encoding: pcm16 | pcm24 | float32."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    n_samples, n_channels = data.shape

    if encoding == "pcm16":
        fmt, bits = _FMT_PCM, 16
        scaled = np.clip(np.rint(data * 32768.0), -32768, 32767).astype("<i2")
        payload = scaled.tobytes()
    elif encoding == "pcm24":
        fmt, bits = _FMT_PCM, 24
        scaled = np.clip(np.rint(data * 8388608.0), -8388608, 8388607).astype("<i4")
        b4 = scaled.astype("<i4").view(np.uint8).reshape(-1, 4)
        payload = np.ascontiguousarray(b4[:, :3]).tobytes()
    elif encoding == "float32":
        fmt, bits = _FMT_FLOAT, 32
        payload = data.astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown encoding: {encoding!r}")

    block_align = n_channels * bits // 8
    byte_rate = sample_rate * block_align
    fmt_chunk = struct.pack(
        "<HHIIHH", fmt, n_channels, sample_rate, byte_rate, block_align, bits
    )
    data_size = len(payload)
    riff_size = 4 + (8 + len(fmt_chunk)) + (8 + data_size + (data_size & 1))

    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", riff_size) + b"WAVE")
        f.write(b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk)
        f.write(b"data" + struct.pack("<I", data_size) + payload)
        if data_size & 1:
            f.write(b"\x00")


def read_wav(path):
    """Read a WAV file. Returns (data[samples, channels] float64, sample_rate)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    offset = 12
    while offset + 8 <= len(raw):
        cid = raw[offset : offset + 4]
        (csize,) = struct.unpack_from("<I", raw, offset + 4)
        body = raw[offset + 8 : offset + 8 + csize]
        if cid == b"fmt ":
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            payload = body
        offset += 8 + csize + (csize & 1)

    if fmt is None or payload is None:
        raise ValueError(f"{path}: missing fmt or data chunk")
    audio_fmt, n_channels, sample_rate, _, _, bits = fmt

    if audio_fmt == _FMT_PCM and bits == 16:
        x = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_fmt == _FMT_PCM and bits == 24:
        b = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3)
        b4 = np.zeros((b.shape[0], 4), dtype=np.uint8)
        b4[:, 1:] = b
        x = (b4.view("<i4")[:, 0] >> 8).astype(np.float64) / 8388608.0
    elif audio_fmt == _FMT_FLOAT and bits == 32:
        x = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported format (fmt={audio_fmt}, bits={bits})")

    return x.reshape(-1, n_channels), sample_rate
