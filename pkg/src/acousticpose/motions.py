"""Procedural motion generator: smooth, periodic, seed-deterministic pose clips.

Five motion families cover the desk-scale repertoire. Amplitudes and
frequencies are chosen so joint speeds stay below 4 normalized units per
second, which keeps frame-to-frame displacements small at 20 FPS.
"""

from __future__ import annotations

import numpy as np

from . import skeleton

MOTIONS = ("still", "t-pose", "squat", "walk", "random-smooth")

FPS = 20

_UPPER = [skeleton.joint_index(n) for n in (
    "spine", "chest", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "l_hand",
    "r_shoulder", "r_elbow", "r_wrist", "r_hand",
)]
_ARMS_L = [skeleton.joint_index(n) for n in ("l_elbow", "l_wrist", "l_hand")]
_ARMS_R = [skeleton.joint_index(n) for n in ("r_elbow", "r_wrist", "r_hand")]
_LEG_L = [skeleton.joint_index(n) for n in ("l_knee", "l_ankle", "l_foot")]
_LEG_R = [skeleton.joint_index(n) for n in ("r_knee", "r_ankle", "r_foot")]
_LIMBS = _ARMS_L + _ARMS_R + _LEG_L + _LEG_R + [
    skeleton.joint_index("head"), skeleton.joint_index("neck"),
]


def _static_variation(rng, scale=0.15):
    """Small per-clip posture offset so clips of one motion are not identical."""
    off = np.zeros((skeleton.N_JOINTS, 3))
    off[_LIMBS] = rng.normal(0.0, scale, size=(len(_LIMBS), 3))
    return off


def gen_pose_sequence(motion, duration_s, seed, fps=FPS):
    """Render a [T, 21, 3] normalized pose sequence for one motion family."""
    if motion not in MOTIONS:
        raise ValueError(f"unknown motion {motion!r}, expected one of {MOTIONS}")
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    rng = np.random.default_rng(seed)
    n_frames = int(round(duration_s * fps))
    t = np.arange(n_frames) / fps
    base = skeleton.REST_POSE.copy()
    frames = np.repeat(base[None], n_frames, axis=0)

    if motion == "still":
        frames = frames + _static_variation(rng)[None]

    elif motion == "t-pose":
        # Whole-body sway: small rotation of everything above the hip.
        amp = np.deg2rad(rng.uniform(4.0, 7.0))
        freq = rng.uniform(0.2, 0.3)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        ang = amp * np.sin(2.0 * np.pi * freq * t + phase)
        ca, sa = np.cos(ang), np.sin(ang)
        upper = frames[:, _UPPER, :]
        x, z = upper[..., 0].copy(), upper[..., 2].copy()
        frames[:, _UPPER, 0] = ca[:, None] * x + sa[:, None] * z
        frames[:, _UPPER, 2] = -sa[:, None] * x + ca[:, None] * z

    elif motion == "squat":
        period = rng.uniform(1.8, 2.4)
        depth = rng.uniform(0.35, 0.55)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        c = depth * 0.5 * (1.0 - np.cos(2.0 * np.pi * t / period + phase))
        # Hip stays at the origin by convention, so a squat folds the legs
        # upward: knees travel forward, ankles and feet rise toward the hip.
        for j in (skeleton.joint_index("l_knee"), skeleton.joint_index("r_knee")):
            frames[:, j, 0] += 1.2 * c
            frames[:, j, 2] += 0.8 * c
        for j in (
            skeleton.joint_index("l_ankle"), skeleton.joint_index("r_ankle"),
            skeleton.joint_index("l_foot"), skeleton.joint_index("r_foot"),
        ):
            frames[:, j, 2] += 1.6 * c
        for j in _ARMS_L + _ARMS_R:
            frames[:, j, 0] += 0.6 * c

    elif motion == "walk":
        period = rng.uniform(1.1, 1.4)
        amp = rng.uniform(0.85, 1.1)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        swing = np.sin(2.0 * np.pi * t / period + phase)
        lift = np.sin(4.0 * np.pi * t / period + phase)
        for j, sign in ((_LEG_L, 1.0), (_LEG_R, -1.0)):
            frames[:, j, 0] += sign * 0.55 * amp * swing[:, None]
        for j, sign in (
            (skeleton.joint_index("l_ankle"), 1.0),
            (skeleton.joint_index("l_foot"), 1.0),
            (skeleton.joint_index("r_ankle"), -1.0),
            (skeleton.joint_index("r_foot"), -1.0),
        ):
            frames[:, j, 2] += 0.15 * amp * np.maximum(0.0, sign * lift)
        # Arms counter-swing.
        for j, sign in ((_ARMS_L, -1.0), (_ARMS_R, 1.0)):
            frames[:, j, 0] += sign * 0.4 * amp * swing[:, None]

    elif motion == "random-smooth":
        freqs = rng.uniform(0.15, 0.6, size=3)
        for j in _LIMBS:
            for axis in range(3):
                amps = rng.uniform(0.0, 0.1, size=3)
                phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
                wave = sum(
                    a * np.sin(2.0 * np.pi * f * t + p)
                    for a, f, p in zip(amps, freqs, phases)
                )
                frames[:, j, axis] += wave
        frames = frames + _static_variation(rng, scale=0.1)[None]

    return skeleton.normalize_pose(frames)


def max_joint_speed(frames, fps=FPS):
    """Largest per-joint speed in normalized units per second."""
    frames = np.asarray(frames)
    if frames.shape[0] < 2:
        return 0.0
    disp = np.linalg.norm(np.diff(frames, axis=0), axis=2)
    return float(disp.max() * fps)
