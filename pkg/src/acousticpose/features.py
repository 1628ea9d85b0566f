"""Featurization: dataset clips -> standardized 11-channel training windows.

Per clip: STFT all four recorded channels and both music channels, take
log-mel energies and the mel-projected intensity direction, standardize the
six log-mel channels with statistics frozen from the training split (or
per-clip behind a flag), subtract music from recording per speaker, and chop
everything into fixed-length windows aligned with the pose frames.

On disk a feature set is a directory with index.json plus one .bin/.json
tensor pair per window for the input feature (x), the music feature (m), and
the pose target (p).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import dsp, roomsim, tensorio, wavio

INDEX_VERSION = 1

LOGMEL_CHANNELS = ("s_w", "s_x", "s_y", "s_z", "m_left", "m_right")


@dataclass
class FeatureConfig:
    n_mels: int = 128
    n_fft: int = 4096
    hop: int = 2400
    sample_rate: int = 48000
    f_min: float = 20.0
    f_max: float | None = None
    intensity_norm: str = "l2"  # or "l1"
    window_frames: int = 12
    window_stride: int = 12
    per_clip_standardize: bool = False
    protocol: str = "single_music"  # split whose train tag freezes the stats

    def __post_init__(self):
        if self.intensity_norm not in ("l2", "l1"):
            raise ValueError(f"intensity_norm must be l2 or l1, got {self.intensity_norm!r}")
        if self.window_frames < 2 or self.window_stride < 1:
            raise ValueError("window_frames must be >= 2 and window_stride >= 1")

    def stft_params(self):
        return {
            "sample_rate": self.sample_rate,
            "n_fft": self.n_fft,
            "hop": self.hop,
            "n_mels": self.n_mels,
            "f_min": self.f_min,
            "f_max": self.f_max if self.f_max is not None else self.sample_rate / 2,
        }


def clip_parts(recorded, music, fcfg, bank):
    """Raw per-clip features before standardization.

    recorded [samples, 4], music [samples, 2] at fcfg.sample_rate.
    Returns (logmels [6, b, T], intensity [3, b, T]).
    """
    grids = [dsp.stft(recorded[:, c], fcfg.n_fft, fcfg.hop) for c in range(4)]
    m_grids = [dsp.stft(music[:, c], fcfg.n_fft, fcfg.hop) for c in range(2)]
    logmels = np.stack(
        [dsp.log_mel(g, bank) for g in grids] + [dsp.log_mel(g, bank) for g in m_grids]
    )
    intensity = dsp.intensity_vector(*grids, bank, norm=fcfg.intensity_norm)
    return logmels, intensity


def assemble_clip(logmels, intensity, stats):
    """Standardize log-mels, form speaker differences, concatenate channels.

    Returns (x [11, b, T], m [2, b, T]); m is the standardized music log-mel
    pair that the attention module consumes.
    """
    std = dsp.standardize_channels(logmels, stats)
    diffs = dsp.difference_features(std[:4], std[4], std[5])
    x = dsp.assemble_input(intensity, diffs)
    return x, std[4:6]


def _read_clip_audio(manifest, rec, fcfg):
    recorded, sr_r = wavio.read_wav(roomsim.record_path(manifest, rec, "recorded"))
    music, sr_m = wavio.read_wav(roomsim.record_path(manifest, rec, "music"))
    if recorded.shape[1] != 4:
        raise ValueError(f"{rec['id']}: recorded.wav must have 4 channels")
    if music.shape[1] != 2:
        raise ValueError(f"{rec['id']}: music.wav must have 2 channels")
    if sr_r != fcfg.sample_rate:
        recorded = dsp.resample_linear(recorded, sr_r, fcfg.sample_rate)
    if sr_m != fcfg.sample_rate:
        music = dsp.resample_linear(music, sr_m, fcfg.sample_rate)
    n = min(recorded.shape[0], music.shape[0])
    return recorded[:n], music[:n]


def featurize_manifest(manifest, out_dir, fcfg):
    """Write one feature window set for every record in the manifest.

    Record-level failures (missing or unreadable audio) are collected and
    reported in the returned index under "failures"; the run continues.
    """
    records = manifest["records"]
    os.makedirs(out_dir, exist_ok=True)
    bank = dsp.build_mel_bank(
        fcfg.n_mels, fcfg.n_fft, fcfg.sample_rate, fcfg.f_min, fcfg.f_max
    )

    failures = []
    parts_cache = {}

    def compute_parts(rec):
        recorded, music = _read_clip_audio(manifest, rec, fcfg)
        poses, _ = tensorio.load_tensor(roomsim.record_path(manifest, rec, "poses"))
        return clip_parts(recorded, music, fcfg, bank), poses

    stats = None
    if not fcfg.per_clip_standardize:
        train_recs = [
            r for r in records if r["splits"].get(fcfg.protocol) == "train"
        ]
        if not train_recs:
            raise ValueError(
                f"protocol {fcfg.protocol!r} has no train records to freeze stats from"
            )
        count = 0
        acc = np.zeros(len(LOGMEL_CHANNELS))
        acc2 = np.zeros(len(LOGMEL_CHANNELS))
        for rec in train_recs:
            try:
                (logmels, intensity), poses = compute_parts(rec)
            except (OSError, ValueError) as exc:
                failures.append({"id": rec["id"], "error": str(exc)})
                continue
            parts_cache[rec["id"]] = (logmels, intensity, poses)
            flat = logmels.reshape(len(LOGMEL_CHANNELS), -1)
            acc += flat.sum(axis=1)
            acc2 += (flat * flat).sum(axis=1)
            count += flat.shape[1]
        if count == 0:
            raise ValueError("every training record failed to featurize")
        mean = acc / count
        var = np.maximum(acc2 / count - mean * mean, 0.0)
        stats = (mean, np.sqrt(var))

    windows = []
    w_frames, w_stride = fcfg.window_frames, fcfg.window_stride
    for rec in records:
        if rec["id"] in parts_cache:
            logmels, intensity, poses = parts_cache.pop(rec["id"])
        else:
            try:
                (logmels, intensity), poses = compute_parts(rec)
            except (OSError, ValueError) as exc:
                if not any(f["id"] == rec["id"] for f in failures):
                    failures.append({"id": rec["id"], "error": str(exc)})
                continue
        clip_stats = dsp.channel_stats(logmels) if fcfg.per_clip_standardize else stats
        x, m = assemble_clip(logmels, intensity, clip_stats)
        t_total = min(x.shape[2], poses.shape[0])
        clip_dir = os.path.join(out_dir, "windows", rec["id"])
        os.makedirs(clip_dir, exist_ok=True)
        w_idx = 0
        for t0 in range(0, t_total - w_frames + 1, w_stride):
            sl = slice(t0, t0 + w_frames)
            files = {
                "x": f"windows/{rec['id']}/x{w_idx:04d}.bin",
                "m": f"windows/{rec['id']}/m{w_idx:04d}.bin",
                "p": f"windows/{rec['id']}/p{w_idx:04d}.bin",
            }
            tensorio.save_tensor(
                os.path.join(out_dir, files["x"]),
                x[:, :, sl].astype(np.float32),
                channel_layout=list(dsp.CHANNEL_LAYOUT),
                stft_params=fcfg.stft_params(),
            )
            tensorio.save_tensor(
                os.path.join(out_dir, files["m"]),
                m[:, :, sl].astype(np.float32),
                channel_layout=["m_left", "m_right"],
                stft_params=fcfg.stft_params(),
            )
            tensorio.save_tensor(
                os.path.join(out_dir, files["p"]), poses[sl].astype(np.float32)
            )
            windows.append(
                {
                    "id": f"{rec['id']}_w{w_idx:04d}",
                    "clip_id": rec["id"],
                    "bgm_id": rec["bgm_id"],
                    "motion": rec["motion"],
                    "splits": rec["splits"],
                    "t0_frame": t0,
                    "files": files,
                }
            )
            w_idx += 1

    index = {
        "version": INDEX_VERSION,
        "feature_config": asdict(fcfg),
        "stats": None
        if stats is None
        else {"mean": stats[0].tolist(), "std": stats[1].tolist()},
        "n_windows": len(windows),
        "windows": windows,
        "failures": failures,
    }
    with open(os.path.join(out_dir, "index.json"), "w") as f:
        json.dump(index, f, indent=1)
        f.write("\n")
    return index


class FeatureSet:
    """In-memory view of a featurized dataset directory."""

    def __init__(self, root):
        self.root = root
        with open(os.path.join(root, "index.json")) as f:
            self.index = json.load(f)
        if self.index.get("version") != INDEX_VERSION:
            raise ValueError(f"{root}: unsupported feature index version")
        self.windows = self.index["windows"]
        if not self.windows:
            raise ValueError(f"{root}: feature set contains no windows")
        self._cache = {}

    def __len__(self):
        return len(self.windows)

    def indices(self, protocol, tag):
        return [
            i
            for i, w in enumerate(self.windows)
            if w["splits"].get(protocol) == tag
        ]

    def bgm_ids(self, idxs=None):
        idxs = range(len(self.windows)) if idxs is None else idxs
        return [self.windows[i]["bgm_id"] for i in idxs]

    def motions(self, idxs=None):
        idxs = range(len(self.windows)) if idxs is None else idxs
        return [self.windows[i]["motion"] for i in idxs]

    def _load(self, i, which):
        key = (i, which)
        if key not in self._cache:
            path = os.path.join(self.root, self.windows[i]["files"][which])
            arr, _ = tensorio.load_tensor(path)
            self._cache[key] = arr
        return self._cache[key]

    def arrays(self, idxs, dtype=np.float64):
        """Stack windows: returns (x [n,11,b,T], m [n,2,b,T], p [n,T,63])."""
        x = np.stack([self._load(i, "x") for i in idxs]).astype(dtype)
        m = np.stack([self._load(i, "m") for i in idxs]).astype(dtype)
        p = np.stack([self._load(i, "p") for i in idxs]).astype(dtype)
        return x, m, p

    def poses(self, idxs, dtype=np.float64):
        """Ground-truth windows only, [n, T, 63]; skips the audio features."""
        return np.stack([self._load(i, "p") for i in idxs]).astype(dtype)
