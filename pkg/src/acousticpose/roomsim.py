"""Synthetic capture rig: speakers play music, a body scatters it, a B-format
microphone listens.

Physics is deliberately minimal. Each speaker contributes one direct path to
the microphone plus one first-order scatter path per joint (speaker -> joint
-> microphone). Every path is delayed by distance/c, attenuated by 1/r per
leg, and encoded into first-order ambisonics by its arrival direction
(w = p/sqrt(2), x = p cos(az) cos(el), y = p sin(az) cos(el), z = p sin(el)).
Joint motion modulates delays and gains, which is the whole point: the pose
becomes audible. Optional image-source wall reflections of the direct paths
sit behind a flag.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bgm as bgm_mod
from . import kernels, motions, skeleton, tensorio, wavio

SAMPLE_RATE = 48000
FPS = 20
MANIFEST_VERSION = 1


@dataclass
class SceneConfig:
    speaker_positions: tuple = ((0.0, 0.6, 1.0), (0.0, -0.6, 1.0))
    mic_position: tuple = (0.0, 0.0, 1.0)
    subject_position: tuple = (1.2, 0.0, 0.95)
    subject_scale: float = 0.25  # meters per normalized skeleton unit
    speed_of_sound: float = 343.0
    direct_gain: float = 0.3
    reflection_gain: float = 0.8
    min_leg_m: float = 0.1  # distance floor for the 1/r attenuation
    wall_gain: float = 0.0  # > 0 enables image-source wall reflections
    room_min: tuple = (-1.0, -2.0, 0.0)
    room_max: tuple = (3.0, 2.0, 2.5)

    def __post_init__(self):
        if self.speed_of_sound <= 0:
            raise ValueError("speed_of_sound must be positive")
        mic = np.asarray(self.mic_position, dtype=np.float64)
        for sp in self.speaker_positions:
            if np.linalg.norm(np.asarray(sp) - mic) < 1e-6:
                raise ValueError("speaker and microphone positions must be distinct")


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else np.zeros_like(v)


def _wall_images(pos, room_min, room_max):
    """Six first-order mirror images of a point about the room walls."""
    images = []
    for axis in range(3):
        for bound in (room_min[axis], room_max[axis]):
            img = np.array(pos, dtype=np.float64)
            img[axis] = 2.0 * bound - img[axis]
            images.append(img)
    return images


def _speaker_paths(scene, speaker, joints_world):
    """Delay/gain/direction knot tables for one speaker.

    joints_world: [K, 21, 3] joint positions at knot times.
    Returns delays [P, K], gains [P, K], dirs [P, K, 3].
    """
    k_knots = joints_world.shape[0]
    mic = np.asarray(scene.mic_position, dtype=np.float64)
    spk = np.asarray(speaker, dtype=np.float64)
    c = scene.speed_of_sound
    floor = scene.min_leg_m

    rows_d, rows_g, rows_dir = [], [], []

    d_direct = max(np.linalg.norm(spk - mic), floor)
    rows_d.append(np.full(k_knots, d_direct / c))
    rows_g.append(np.full(k_knots, scene.direct_gain / d_direct))
    rows_dir.append(np.tile(_unit(spk - mic), (k_knots, 1)))

    if scene.wall_gain > 0.0:
        for img in _wall_images(spk, scene.room_min, scene.room_max):
            d_img = max(np.linalg.norm(img - mic), floor)
            rows_d.append(np.full(k_knots, d_img / c))
            rows_g.append(np.full(k_knots, scene.wall_gain * scene.direct_gain / d_img))
            rows_dir.append(np.tile(_unit(img - mic), (k_knots, 1)))

    d1 = np.linalg.norm(joints_world - spk, axis=2)  # [K, 21]
    d2 = np.linalg.norm(joints_world - mic, axis=2)
    d1c = np.maximum(d1, floor)
    d2c = np.maximum(d2, floor)
    delays = ((d1 + d2) / c).T  # [21, K]
    gains = (scene.reflection_gain * skeleton.SCATTER_WEIGHTS[None, :] / (d1c * d2c)).T
    dirs = (joints_world - mic) / d2c[:, :, None]
    dirs = np.transpose(dirs, (1, 0, 2))  # [21, K, 3]

    rows_d.extend(delays)
    rows_g.extend(gains)
    rows_dir.extend(dirs)

    return (
        np.ascontiguousarray(np.stack(rows_d)),
        np.ascontiguousarray(np.stack(rows_g)),
        np.ascontiguousarray(np.stack(rows_dir)),
    )


def render_recording(scene, music, poses, sample_rate=SAMPLE_RATE, fps=FPS):
    """Render a B-format recording [samples, 4] of stereo music in the scene.

    music [samples, 2] and poses [frames, 21, 3] must cover the same span:
    samples = frames * sample_rate / fps exactly.
    """
    music = np.ascontiguousarray(np.asarray(music, dtype=np.float64))
    poses = np.asarray(poses, dtype=np.float64)
    if music.ndim != 2 or music.shape[1] != 2:
        raise ValueError(f"expected stereo music [samples, 2], got {music.shape}")
    if poses.ndim != 3 or poses.shape[1:] != (skeleton.N_JOINTS, 3):
        raise ValueError(f"expected poses [frames, 21, 3], got {poses.shape}")
    if len(scene.speaker_positions) != music.shape[1]:
        raise ValueError("one music channel per speaker required")
    hop = sample_rate / fps
    expected = int(round(poses.shape[0] * hop))
    if music.shape[0] != expected:
        raise ValueError(
            f"music length {music.shape[0]} does not match {poses.shape[0]} pose "
            f"frames at {fps} FPS ({expected} samples expected)"
        )

    # Knot positions at frame boundaries; the final frame's pose is held.
    pose_knots = np.concatenate([poses, poses[-1:]], axis=0)
    joints_world = np.asarray(scene.subject_position) + scene.subject_scale * pose_knots

    out = np.zeros((music.shape[0], 4), dtype=np.float64)
    for i, speaker in enumerate(scene.speaker_positions):
        delays, gains, dirs = _speaker_paths(scene, speaker, joints_world)
        kernels.scatter_render(
            np.ascontiguousarray(music[:, i]), delays, gains, dirs,
            hop, float(sample_rate), out,
        )
    return out


def add_gaussian_noise(clip, snr_db, seed):
    """Add per-channel Gaussian noise at the given SNR. Deterministic per seed."""
    clip = np.asarray(clip, dtype=np.float64)
    power = (clip * clip).mean(axis=0)
    if power.max() <= 1e-20:
        raise ValueError("SNR is undefined for a silent clip")
    rng = np.random.default_rng(seed)
    std = np.sqrt(power / (10.0 ** (snr_db / 10.0)))
    return clip + rng.normal(0.0, 1.0, size=clip.shape) * std[None, :]


# ---------------------------------------------------------------------------
# dataset construction
# ---------------------------------------------------------------------------

@dataclass
class DatasetPlan:
    """What to generate: which music, which motions, how many clips of each."""

    bgm_specs: dict = field(default_factory=dict)  # bgm_id -> BgmSpec
    motions: tuple = motions.MOTIONS
    clips_per_pair: int = 4
    clip_duration_s: float = 6.0
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    cross_music_holdout: str = ""  # bgm id; default picks the last sorted id
    cross_genre_holdout: str = ""  # bgm kind; empty disables the split
    noise_snr_db: float | None = None
    subject_id: str = "s00"


def _single_music_split(n, rng, val_fraction, test_fraction):
    order = rng.permutation(n)
    n_test = max(1, int(round(n * test_fraction))) if n >= 3 else 0
    n_val = max(1, int(round(n * val_fraction))) if n >= 3 else 0
    tags = ["train"] * n
    for i in order[:n_test]:
        tags[i] = "test"
    for i in order[n_test : n_test + n_val]:
        tags[i] = "val"
    return tags


def build_dataset(out_dir, scene, plan, seed, threads=None):
    """Generate clips and write manifest.json plus per-clip WAV/pose files.

    Returns the manifest dict. Deterministic given (scene, plan, seed); clip
    rendering runs in a thread pool, the manifest is written once at the end.
    """
    if not plan.bgm_specs:
        raise ValueError("dataset plan lists no BGM specs")
    if not plan.motions:
        raise ValueError("dataset plan lists no motions")
    if plan.clips_per_pair < 1:
        raise ValueError("clips_per_pair must be >= 1")

    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    bgm_ids = sorted(plan.bgm_specs)
    bgm_seeds = {bid: int(rng.integers(0, 2**31)) for bid in bgm_ids}

    cross_music_holdout = plan.cross_music_holdout or bgm_ids[-1]
    if cross_music_holdout not in plan.bgm_specs:
        raise ValueError(f"cross-music holdout {cross_music_holdout!r} is not a bgm id")

    n_frames = int(round(plan.clip_duration_s * FPS))
    duration = n_frames / FPS

    # One waveform per bgm id, shared by all of its clips: two clips with the
    # same bgm id really were sensed with identical music, which is what makes
    # them hard negatives for each other.
    waveforms = {
        bid: bgm_mod.synth_bgm(plan.bgm_specs[bid], duration, bgm_seeds[bid])
        for bid in bgm_ids
    }

    records = []
    idx = 0
    for bid in bgm_ids:
        for motion in plan.motions:
            group = []
            for _ in range(plan.clips_per_pair):
                clip_id = f"c{idx:04d}"
                group.append(
                    {
                        "id": clip_id,
                        "bgm_id": bid,
                        "bgm_kind": plan.bgm_specs[bid].kind,
                        "motion": motion,
                        "subject_id": plan.subject_id,
                        "clip_seed": int(rng.integers(0, 2**31)),
                        "duration_s": duration,
                        "n_frames": n_frames,
                        "files": {
                            "recorded": f"clips/{clip_id}/recorded.wav",
                            "music": f"clips/{clip_id}/music.wav",
                            "poses": f"clips/{clip_id}/poses.bin",
                        },
                        "splits": {},
                        "noise": None,
                    }
                )
                idx += 1
            tags = _single_music_split(
                len(group), rng, plan.val_fraction, plan.test_fraction
            )
            for rec, tag in zip(group, tags):
                rec["splits"]["single_music"] = tag
            records.extend(group)

    holdout_count = 0
    for rec in records:
        if rec["bgm_id"] == cross_music_holdout:
            rec["splits"]["cross_music"] = "val" if holdout_count % 2 == 0 else "test"
            holdout_count += 1
        else:
            rec["splits"]["cross_music"] = "train"

    genre = plan.cross_genre_holdout
    if genre:
        kinds = {plan.bgm_specs[bid].kind for bid in bgm_ids}
        if genre in kinds and len(kinds) > 1:
            for rec in records:
                if rec["bgm_kind"] == genre:
                    rec["splits"]["cross_genre"] = "test"
                else:
                    rec["splits"]["cross_genre"] = (
                        "val" if rec["splits"]["single_music"] == "val" else "train"
                    )

    if plan.noise_snr_db is not None:
        for rec in records:
            rec["noise"] = {
                "snr_db": float(plan.noise_snr_db),
                "seed": int(rng.integers(0, 2**31)),
            }

    def render_one(rec):
        clip_dir = os.path.join(out_dir, "clips", rec["id"])
        os.makedirs(clip_dir, exist_ok=True)
        poses = motions.gen_pose_sequence(rec["motion"], duration, rec["clip_seed"])
        music = waveforms[rec["bgm_id"]]
        recorded = render_recording(scene, music, poses)
        if rec["noise"] is not None:
            recorded = add_gaussian_noise(
                recorded, rec["noise"]["snr_db"], rec["noise"]["seed"]
            )
        wavio.write_wav(
            os.path.join(clip_dir, "recorded.wav"), recorded, SAMPLE_RATE, "float32"
        )
        wavio.write_wav(
            os.path.join(clip_dir, "music.wav"), music, SAMPLE_RATE, "float32"
        )
        tensorio.save_tensor(
            os.path.join(clip_dir, "poses.bin"),
            poses.reshape(n_frames, skeleton.N_JOINTS * 3).astype(np.float32),
            fps=FPS,
            channel_layout="frame x (joint*xyz)",
        )

    workers = threads or min(8, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(render_one, records))

    manifest = {
        "version": MANIFEST_VERSION,
        "seed": int(seed),
        "sample_rate": SAMPLE_RATE,
        "fps": FPS,
        "scene": asdict(scene),
        "bgm": {bid: asdict(plan.bgm_specs[bid]) for bid in bgm_ids},
        "bgm_seeds": bgm_seeds,
        "cross_music_holdout": cross_music_holdout,
        "cross_genre_holdout": genre,
        "records": records,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")
    # Mirror load_manifest so the return value is directly consumable.
    manifest["root"] = os.path.abspath(out_dir)
    return manifest


def load_manifest(path):
    """Read and sanity-check a dataset manifest. Raises ValueError on damage."""
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {manifest.get('version')}")
    if not manifest.get("records"):
        raise ValueError(f"{path}: manifest lists no records")
    for rec in manifest["records"]:
        for key in ("id", "bgm_id", "motion", "files", "splits", "n_frames"):
            if key not in rec:
                raise ValueError(f"{path}: record missing {key!r}")
    manifest["root"] = os.path.dirname(os.path.abspath(path))
    return manifest


def record_path(manifest, rec, which):
    return os.path.join(manifest["root"], rec["files"][which])
