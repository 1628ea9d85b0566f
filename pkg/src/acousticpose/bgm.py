"""Synthetic background-music generator for the sensing-signal source.

Four kinds:
  ambient-like   sustained harmonic pad with slow amplitude drift, no silences
  jazz-like      sparse decaying note events with genuine silent gaps
  chirp          repeating linear frequency sweep (the classic active-sensing
                 baseline signal)
  wav-file       an external stereo WAV, resampled to the target rate

Every kind is a deterministic function of (spec, duration, seed). The two
stereo channels are deliberately decorrelated: the speakers in the scene are
supposed to emit slightly different signals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp, wavio

KINDS = ("ambient-like", "jazz-like", "chirp", "wav-file")

SAMPLE_RATE = 48000


@dataclass
class BgmSpec:
    kind: str = "ambient-like"
    n_harmonics: int = 8
    base_freq: float = 110.0
    amp_lfo_hz: float = 0.15
    silence_density: float = 0.35  # jazz-like: fraction of time without a note
    chirp_period_s: float = 0.5
    chirp_f0: float = 100.0
    chirp_f1: float = 8000.0
    path: str = ""  # wav-file kind
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown bgm kind {self.kind!r}, expected one of {KINDS}")
        if self.kind == "wav-file" and not self.path:
            raise ValueError("wav-file bgm spec needs a path")


def _normalize_peak(x, peak=0.9):
    m = np.abs(x).max()
    if m > 0:
        x = x * (peak / m)
    return x


def _ambient(spec, n, rng):
    t = np.arange(n) / SAMPLE_RATE
    out = np.zeros((n, 2))
    base = spec.base_freq * rng.uniform(0.9, 1.1)
    # Gentle 1/sqrt(h) rolloff keeps upper partials audible: discrete lines
    # sample the room response at points instead of averaging across a whole
    # mel band, so a spectrally wide pad carries more spatial information
    # than an equally loud noise bed would.
    for h in range(1, spec.n_harmonics + 1):
        freq = base * h * rng.uniform(0.998, 1.002)
        if freq >= SAMPLE_RATE / 2.0:
            break
        amp = rng.uniform(0.5, 1.0) / np.sqrt(h)
        lfo_f = spec.amp_lfo_hz * rng.uniform(0.5, 1.5)
        lfo_p = rng.uniform(0.0, 2.0 * np.pi)
        # Envelope bounded away from zero: ambient pads never go silent.
        env = 0.65 + 0.35 * np.sin(2.0 * np.pi * lfo_f * t + lfo_p)
        for ch in range(2):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            detune = 1.0 + 0.001 * (ch - 0.5)
            out[:, ch] += amp * env * np.sin(2.0 * np.pi * freq * detune * t + phase)
    return out


def _jazz(spec, n, rng):
    out = np.zeros((n, 2))
    t_cursor = 0.0
    duration = n / SAMPLE_RATE
    # Pentatonic-ish pitch pool keeps it vaguely musical.
    pool = 220.0 * 2.0 ** (np.array([0, 3, 5, 7, 10, 12, 15]) / 12.0)
    while t_cursor < duration:
        gap = rng.exponential(0.25) * spec.silence_density / 0.35
        t_cursor += gap
        note_len = rng.uniform(0.15, 0.6)
        start = int(t_cursor * SAMPLE_RATE)
        if start >= n:
            break
        length = min(int(note_len * SAMPLE_RATE), n - start)
        if length <= 0:
            break
        freq = rng.choice(pool) * rng.choice([0.5, 1.0, 2.0])
        tt = np.arange(length) / SAMPLE_RATE
        env = np.exp(-tt / rng.uniform(0.08, 0.25))
        tone = np.zeros(length)
        for h, w in ((1, 1.0), (2, 0.5), (3, 0.25)):
            tone += w * np.sin(2.0 * np.pi * freq * h * tt + rng.uniform(0, 2 * np.pi))
        tone *= env * rng.uniform(0.4, 1.0)
        pan = rng.uniform(0.2, 0.8)
        out[start : start + length, 0] += tone * pan
        out[start : start + length, 1] += tone * (1.0 - pan)
        t_cursor += note_len * rng.uniform(0.4, 1.0)
    return out


def _chirp(spec, n, rng):
    t = np.arange(n) / SAMPLE_RATE
    p = spec.chirp_period_s
    out = np.zeros((n, 2))
    for ch, stretch in ((0, 1.0), (1, 0.97)):
        f0 = spec.chirp_f0
        f1 = spec.chirp_f1 * stretch
        tt = np.mod(t, p)
        phase = 2.0 * np.pi * (f0 * tt + 0.5 * (f1 - f0) * tt * tt / p)
        out[:, ch] = np.sin(phase)
    return out


def synth_bgm(spec, duration_s, seed):
    """Render stereo BGM [samples, 2] at 48 kHz, peak-normalized, deterministic."""
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    if spec.kind == "ambient-like":
        out = _ambient(spec, n, rng)
    elif spec.kind == "jazz-like":
        out = _jazz(spec, n, rng)
    elif spec.kind == "chirp":
        out = _chirp(spec, n, rng)
    else:
        data, sr = wavio.read_wav(spec.path)
        if data.shape[1] == 1:
            data = np.repeat(data, 2, axis=1)
        data = dsp.resample_linear(data[:, :2], sr, SAMPLE_RATE)
        if data.shape[0] < n:
            reps = -(-n // data.shape[0])
            data = np.tile(data, (reps, 1))
        out = data[:n]
    return _normalize_peak(out)


def longest_silence_s(x, thresh=1e-3):
    """Length of the longest run where both channels stay below thresh."""
    quiet = np.all(np.abs(np.asarray(x)) < thresh, axis=1)
    longest = run = 0
    for q in quiet:
        run = run + 1 if q else 0
        longest = max(longest, run)
    return longest / SAMPLE_RATE
