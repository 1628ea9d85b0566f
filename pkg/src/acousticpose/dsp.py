"""Acoustic feature engineering for B-format recordings of played-back music.

The pipeline turns a 4-channel ambisonic recording plus the 2-channel source
music into an 11-channel input feature:

  channels 0..2   sound intensity direction (x, y, z), mel-projected
  channels 3..6   standardized log-mel difference vs the left speaker (w,x,y,z)
  channels 7..10  standardized log-mel difference vs the right speaker

Log-spectral subtraction of the known music approximates the transfer
function between each speaker and the microphone, which is where the pose
information lives; the intensity vector adds arrival-direction cues.
"""

from __future__ import annotations

import math

import numpy as np

DEFAULT_SAMPLE_RATE = 48000
DEFAULT_N_FFT = 4096
DEFAULT_HOP = 2400  # 20 feature frames per second at 48 kHz
DEFAULT_N_MELS = 128
DEFAULT_F_MIN = 20.0
LOG_FLOOR_EPS = 1e-10
ZERO_NORM_EPS = 1e-12

CHANNEL_LAYOUT = (
    "intensity_x",
    "intensity_y",
    "intensity_z",
    "diff_left_w",
    "diff_left_x",
    "diff_left_y",
    "diff_left_z",
    "diff_right_w",
    "diff_right_x",
    "diff_right_y",
    "diff_right_z",
)


def hann_window(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(signal, n_fft=DEFAULT_N_FFT, hop=DEFAULT_HOP, window=None):
    """Short-time Fourier transform, zero-padded at the tail.

    The frame count is the smallest that covers every input sample:
    ceil((len - n_fft) / hop) + 1. With hop dividing the signal length this
    gives exactly len/hop frames, so 20 FPS audio lines up one-to-one with
    20 FPS pose frames. Returns a complex grid [n_fft//2 + 1, frames].
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"stft expects a mono signal, got shape {x.shape}")
    if n_fft <= 0 or (n_fft & (n_fft - 1)) != 0:
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    if hop <= 0:
        raise ValueError(f"hop must be positive, got {hop}")
    if x.shape[0] < n_fft:
        raise ValueError(
            f"signal of {x.shape[0]} samples is shorter than one {n_fft}-sample window"
        )
    if window is None:
        window = hann_window(n_fft)
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (n_fft,):
        raise ValueError(f"window shape {window.shape} does not match n_fft={n_fft}")

    n_frames = -(-(x.shape[0] - n_fft) // hop) + 1
    padded = (n_frames - 1) * hop + n_fft
    if padded > x.shape[0]:
        x = np.concatenate([x, np.zeros(padded - x.shape[0])])
    stride = x.strides[0]
    frames = np.lib.stride_tricks.as_strided(
        x, shape=(n_frames, n_fft), strides=(hop * stride, stride), writeable=False
    )
    return np.fft.rfft(frames * window, axis=1).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_bank(n_mels, n_fft, sample_rate, f_min=DEFAULT_F_MIN, f_max=None):
    """Triangular mel filter bank, area-normalized. Shape [n_mels, n_fft//2+1]."""
    if f_max is None:
        f_max = sample_rate / 2.0
    if n_mels < 1:
        raise ValueError(f"n_mels must be >= 1, got {n_mels}")
    if not (0.0 <= f_min < f_max <= sample_rate / 2.0):
        raise ValueError(
            f"invalid mel range [{f_min}, {f_max}] for sample rate {sample_rate}"
        )
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    lower = edges[:-2, None]
    center = edges[1:-1, None]
    upper = edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank *= 2.0 / (upper - lower)
    return bank


def log_mel(grid, bank, floor_eps=LOG_FLOOR_EPS):
    """log(bank . |grid|^2 + floor_eps). Shape [n_mels, frames]."""
    grid = np.asarray(grid)
    if bank.shape[1] != grid.shape[0]:
        raise ValueError(
            f"bank covers {bank.shape[1]} frequency bins, grid has {grid.shape[0]}"
        )
    power = (grid.real * grid.real) + (grid.imag * grid.imag)
    return np.log(bank @ power + floor_eps)


def intensity_vector(w, x, y, z, bank, norm="l2", zero_eps=ZERO_NORM_EPS):
    """Mel-projected sound intensity direction from B-format STFT grids.

    Per FFT bin the acoustic intensity is Re{conj(W) * (X, Y, Z)}; each bin's
    vector is normalized to unit length (bins below zero_eps become zero so
    silence cannot produce NaN), then projected through the mel bank.
    Returns [3, n_mels, frames].
    """
    grids = (w, x, y, z)
    shape = np.asarray(w).shape
    for g in grids:
        if np.asarray(g).shape != shape:
            raise ValueError("B-format STFT grids must share one shape")
    wc = np.conj(np.asarray(w))
    raw = np.stack(
        [
            (wc * np.asarray(x)).real,
            (wc * np.asarray(y)).real,
            (wc * np.asarray(z)).real,
        ]
    )
    if norm == "l2":
        mag = np.sqrt((raw * raw).sum(axis=0))
    elif norm == "l1":
        mag = np.abs(raw).sum(axis=0)
    else:
        raise ValueError(f"norm must be 'l2' or 'l1', got {norm!r}")
    keep = mag >= zero_eps
    inv = np.where(keep, 1.0 / np.where(keep, mag, 1.0), 0.0)
    dirs = raw * inv[None, :, :]
    return np.einsum("mk,ckt->cmt", bank, dirs, optimize=True)


def channel_stats(t):
    """Per-channel scalar (mean, std) over everything but the channel axis."""
    t = np.asarray(t, dtype=np.float64)
    axes = tuple(range(1, t.ndim))
    return t.mean(axis=axes), t.std(axis=axes)


def standardize_channels(t, stats):
    """(t - mean) / std per channel; zero-variance channels collapse to zero."""
    mean, std = stats
    t = np.asarray(t, dtype=np.float64)
    shape = (-1,) + (1,) * (t.ndim - 1)
    mean = np.asarray(mean, dtype=np.float64).reshape(shape)
    std = np.asarray(std, dtype=np.float64).reshape(shape)
    return (t - mean) / np.maximum(std, ZERO_NORM_EPS)


def difference_features(s_norm, m_norm_left, m_norm_right):
    """Standardized log-spectral differences against each speaker's music.

    s_norm [4, b, T] minus each mono music spectrogram [b, T] broadcast over
    the four recorded channels; left block first. Returns [8, b, T].
    """
    s_norm = np.asarray(s_norm)
    m_norm_left = np.asarray(m_norm_left)
    m_norm_right = np.asarray(m_norm_right)
    if s_norm.ndim != 3 or s_norm.shape[0] != 4:
        raise ValueError(f"expected recorded spectra [4, b, T], got {s_norm.shape}")
    if m_norm_left.shape != s_norm.shape[1:] or m_norm_right.shape != s_norm.shape[1:]:
        raise ValueError(
            f"music spectra {m_norm_left.shape}/{m_norm_right.shape} do not match "
            f"recorded {s_norm.shape[1:]}"
        )
    return np.concatenate(
        [s_norm - m_norm_left[None], s_norm - m_norm_right[None]], axis=0
    )


def assemble_input(intensity, diffs):
    """Concatenate [3,b,T] intensity and [8,b,T] diffs into the 11-channel input."""
    intensity = np.asarray(intensity)
    diffs = np.asarray(diffs)
    if intensity.ndim != 3 or intensity.shape[0] != 3:
        raise ValueError(f"expected intensity [3, b, T], got {intensity.shape}")
    if diffs.shape != (8,) + intensity.shape[1:]:
        raise ValueError(
            f"expected diffs [8, {intensity.shape[1]}, {intensity.shape[2]}], "
            f"got {diffs.shape}"
        )
    return np.concatenate([intensity, diffs], axis=0)


def resample_linear(x, sr_in, sr_out):
    """Linear-interpolation resampler; fine for band-limited synthetic music."""
    x = np.asarray(x, dtype=np.float64)
    if sr_in == sr_out:
        return x.copy()
    n_in = x.shape[0]
    n_out = int(round(n_in * sr_out / sr_in))
    t_out = np.arange(n_out) * (sr_in / sr_out)
    t_in = np.arange(n_in)
    if x.ndim == 1:
        return np.interp(t_out, t_in, x)
    return np.stack([np.interp(t_out, t_in, x[:, c]) for c in range(x.shape[1])], axis=1)


def doa_direction(intensity_feature):
    """Dominant arrival direction from a mel-projected intensity feature [3,b,T]."""
    v = np.asarray(intensity_feature).sum(axis=(1, 2))
    n = np.linalg.norm(v)
    if n < ZERO_NORM_EPS:
        return np.zeros(3)
    return v / n


def angle_between_deg(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < ZERO_NORM_EPS or nv < ZERO_NORM_EPS:
        return 180.0
    c = np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0)
    return math.degrees(math.acos(c))
