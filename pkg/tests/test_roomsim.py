import dataclasses
import json
import math
import os

import numpy as np
import pytest

from acousticpose import dsp, motions, roomsim, skeleton, tensorio, wavio
from acousticpose.bgm import BgmSpec, synth_bgm
from acousticpose.roomsim import (
    FPS,
    SAMPLE_RATE,
    DatasetPlan,
    SceneConfig,
    add_gaussian_noise,
    build_dataset,
    load_manifest,
    record_path,
    render_recording,
)


def _still_pose(n_frames):
    return np.repeat(skeleton.REST_POSE[None], n_frames, axis=0)


def _noise_music(seconds, rng, right_silent=False):
    n = int(seconds * SAMPLE_RATE)
    music = 0.3 * rng.normal(size=(n, 2))
    if right_silent:
        music[:, 1] = 0.0
    return music


def test_direct_path_is_delayed_scaled_music(rng):
    """No body, one active speaker 1 m away: closed-form single path."""
    scene = SceneConfig(
        speaker_positions=((1.0, 0.0, 1.0), (0.0, -0.6, 1.0)),
        mic_position=(0.0, 0.0, 1.0),
        reflection_gain=0.0,
    )
    music = _noise_music(1.0, rng, right_silent=True)
    rec = render_recording(scene, music, _still_pose(FPS))

    delay_s = 1.0 / scene.speed_of_sound  # ~2.915 ms
    n = np.arange(music.shape[0], dtype=np.float64)
    delayed = np.interp(n - delay_s * SAMPLE_RATE, n, music[:, 0],
                        left=0.0, right=0.0)
    expect_w = scene.direct_gain * math.sqrt(0.5) * delayed
    sl = slice(200, -200)
    np.testing.assert_allclose(rec[sl, 0], expect_w[sl], atol=1e-12)
    # arrival from +x at equal height: x = sqrt(2) w, y = z = 0
    np.testing.assert_allclose(rec[sl, 1], math.sqrt(2.0) * rec[sl, 0], atol=1e-12)
    np.testing.assert_allclose(rec[sl, 2:], 0.0, atol=1e-12)


def test_body_presence_changes_the_recording(rng):
    music = _noise_music(1.0, rng)
    poses = _still_pose(FPS)
    with_body = render_recording(SceneConfig(), music, poses)
    without = render_recording(
        dataclasses.replace(SceneConfig(), reflection_gain=0.0), music, poses
    )
    gap = np.linalg.norm(with_body - without)
    assert gap > 1e-3 * np.linalg.norm(without)


def test_distinct_poses_give_distinct_recordings(rng):
    """The sensing premise: pose is audible in the rendered signal."""
    music = _noise_music(2.0, rng)
    scene = SceneConfig()
    recs = []
    for motion, seed in (("walk", 0), ("squat", 0), ("t-pose", 0), ("still", 0)):
        poses = motions.gen_pose_sequence(motion, 2.0, seed=seed)
        recs.append(render_recording(scene, music, poses))
    for i in range(len(recs)):
        for j in range(i + 1, len(recs)):
            gap = np.linalg.norm(recs[i] - recs[j])
            assert gap > 1e-6 * np.linalg.norm(recs[i])


def test_energy_bound(rng):
    scene = SceneConfig()
    music = synth_bgm(BgmSpec(kind="ambient-like"), 2.0, seed=4)
    poses = motions.gen_pose_sequence("walk", 2.0, seed=1)
    rec = render_recording(scene, music, poses)
    limit = (scene.direct_gain + 21.0 * scene.reflection_gain)
    rms = lambda a: float(np.sqrt((a**2).mean()))
    assert rms(rec) <= limit * rms(music)


def test_direct_doa_matches_speaker_bearing(rng):
    """Intensity analysis of a body-free render recovers speaker direction."""
    az = math.radians(45.0)
    scene = SceneConfig(
        speaker_positions=(
            (math.cos(az), math.sin(az), 1.0),
            (0.0, -0.6, 1.0),
        ),
        mic_position=(0.0, 0.0, 1.0),
        reflection_gain=0.0,
    )
    music = _noise_music(1.0, rng, right_silent=True)
    rec = render_recording(scene, music, _still_pose(FPS))
    bank = dsp.build_mel_bank(32, 4096, SAMPLE_RATE)
    grids = [dsp.stft(rec[:, c]) for c in range(4)]
    feat = dsp.intensity_vector(*grids, bank)
    bearing = np.array([math.cos(az), math.sin(az), 0.0])
    err = dsp.angle_between_deg(dsp.doa_direction(feat), bearing)
    assert err < 10.0


def test_render_rejects_length_mismatch(rng):
    music = _noise_music(1.0, rng)
    with pytest.raises(ValueError):
        render_recording(SceneConfig(), music, _still_pose(FPS + 1))
    with pytest.raises(ValueError):
        render_recording(SceneConfig(), music[:, :1], _still_pose(FPS))


def test_scene_validation():
    with pytest.raises(ValueError):
        SceneConfig(speed_of_sound=0.0)
    with pytest.raises(ValueError):
        SceneConfig(speaker_positions=((0.0, 0.0, 1.0), (0.0, -0.6, 1.0)),
                    mic_position=(0.0, 0.0, 1.0))


def test_wall_reflections_add_energy(rng):
    music = _noise_music(1.0, rng)
    poses = _still_pose(FPS)
    base = render_recording(
        dataclasses.replace(SceneConfig(), reflection_gain=0.0), music, poses
    )
    walls = render_recording(
        dataclasses.replace(SceneConfig(), reflection_gain=0.0, wall_gain=0.5),
        music, poses,
    )
    assert np.linalg.norm(walls) > np.linalg.norm(base)


# --- noise -------------------------------------------------------------------


def test_noise_hits_requested_snr(rng):
    clip = rng.normal(size=(SAMPLE_RATE, 4))
    noisy = add_gaussian_noise(clip, 10.0, seed=2)
    noise = noisy - clip
    for c in range(4):
        snr = 10.0 * math.log10((clip[:, c] ** 2).mean() / (noise[:, c] ** 2).mean())
        assert abs(snr - 10.0) <= 0.2


def test_noise_limit_case_and_determinism(rng):
    clip = rng.normal(size=(SAMPLE_RATE // 4, 4))
    nearly = add_gaussian_noise(clip, 300.0, seed=0)
    rel = np.linalg.norm(nearly - clip) / np.linalg.norm(clip)
    assert rel < 1e-3
    a = add_gaussian_noise(clip, 10.0, seed=5)
    b = add_gaussian_noise(clip, 10.0, seed=5)
    np.testing.assert_array_equal(a, b)


def test_noise_rejects_silence():
    with pytest.raises(ValueError):
        add_gaussian_noise(np.zeros((100, 4)), 10.0, seed=0)


# --- dataset -----------------------------------------------------------------


def test_dataset_records_and_files(small_cfg, small_dataset):
    records = small_dataset["records"]
    plan = small_cfg.plan()
    expect = len(plan.bgm_specs) * len(plan.motions) * plan.clips_per_pair
    assert len(records) == expect
    for rec in records:
        rec_wav = record_path(small_dataset, rec, "recorded")
        mus_wav = record_path(small_dataset, rec, "music")
        poses_bin = record_path(small_dataset, rec, "poses")
        recorded, sr = wavio.read_wav(rec_wav)
        assert sr == SAMPLE_RATE and recorded.shape[1] == 4
        music, _ = wavio.read_wav(mus_wav)
        assert music.shape == (recorded.shape[0], 2)
        poses, info = tensorio.load_tensor(poses_bin)
        assert poses.shape == (rec["n_frames"], 63)
        assert recorded.shape[0] == rec["n_frames"] * SAMPLE_RATE // FPS


def test_dataset_split_properties(small_dataset):
    records = small_dataset["records"]
    by_split = lambda proto, tag: [r for r in records
                                   if r["splits"].get(proto) == tag]

    # cross-music: held-out bgm never trains, trainers never evaluate
    train_bgms = {r["bgm_id"] for r in by_split("cross_music", "train")}
    eval_bgms = {r["bgm_id"] for r in by_split("cross_music", "val")} | {
        r["bgm_id"] for r in by_split("cross_music", "test")
    }
    assert train_bgms and eval_bgms
    assert train_bgms.isdisjoint(eval_bgms)
    assert eval_bgms == {small_dataset["cross_music_holdout"]}

    # cross-genre: the held-out kind is test-only
    genre = small_dataset["cross_genre_holdout"]
    for rec in records:
        if rec["bgm_kind"] == genre:
            assert rec["splits"]["cross_genre"] == "test"
        else:
            assert rec["splits"]["cross_genre"] != "test"

    # single-music: every (bgm, motion) group of 3 splits 1/1/1
    groups = {}
    for rec in records:
        groups.setdefault((rec["bgm_id"], rec["motion"]), []).append(
            rec["splits"]["single_music"]
        )
    for key, tags in groups.items():
        assert sorted(tags) == ["test", "train", "val"], key


def test_dataset_same_seed_same_manifest(tmp_path, small_cfg, small_dataset):
    again = build_dataset(
        str(tmp_path / "again"), small_cfg.scene, small_cfg.plan(),
        seed=small_cfg.seed,
    )
    a = {k: v for k, v in small_dataset.items() if k != "root"}
    b = {k: v for k, v in again.items() if k != "root"}
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_dataset_noise_metadata(tmp_path, small_cfg):
    plan = small_cfg.plan()
    plan.motions = ("still",)
    plan.clips_per_pair = 1
    plan.bgm_specs = {"groove": plan.bgm_specs["groove"]}
    plan.cross_music_holdout = ""
    plan.cross_genre_holdout = ""
    plan.noise_snr_db = 10.0
    manifest = build_dataset(str(tmp_path / "noisy"), small_cfg.scene, plan, seed=1)
    for rec in manifest["records"]:
        assert rec["noise"]["snr_db"] == 10.0
        assert isinstance(rec["noise"]["seed"], int)


def test_dataset_rejects_empty_plan(tmp_path, small_cfg):
    plan = small_cfg.plan()
    plan.bgm_specs = {}
    with pytest.raises(ValueError):
        build_dataset(str(tmp_path / "x"), small_cfg.scene, plan, seed=0)


def test_load_manifest_validates(tmp_path, small_dataset):
    root = small_dataset["root"]
    loaded = load_manifest(root)
    assert loaded["records"]
    bad = dict(loaded)
    bad.pop("root")
    bad["version"] = 99
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(ValueError):
        load_manifest(str(path))
