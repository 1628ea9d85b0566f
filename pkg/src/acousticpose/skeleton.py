"""21-joint skeleton used throughout: layout, rest pose, and normalization.

Coordinates are unitless: every pose is normalized so the hip sits at the
origin and the hip-to-spine distance is exactly 1. The rest pose is a T-pose
with z up, x forward, y toward the subject's left.
"""

from __future__ import annotations

import numpy as np

JOINT_NAMES = (
    "hip",
    "spine",
    "chest",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "l_hand",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "r_hand",
    "l_hip",
    "l_knee",
    "l_ankle",
    "l_foot",
    "r_hip",
    "r_knee",
    "r_ankle",
    "r_foot",
)

PARENTS = (-1, 0, 1, 2, 3, 2, 5, 6, 7, 2, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19)

N_JOINTS = len(JOINT_NAMES)

HIP = 0
SPINE = 1
NECK = 3
HEAD = 4

# Acoustic cross-section weight per joint: torso scatters more than limbs.
SCATTER_WEIGHTS = np.array(
    [
        1.0,  # hip
        1.0,  # spine
        1.0,  # chest
        0.7,  # neck
        0.8,  # head
        0.6, 0.4, 0.3, 0.25,  # left arm
        0.6, 0.4, 0.3, 0.25,  # right arm
        0.8, 0.5, 0.35, 0.3,  # left leg
        0.8, 0.5, 0.35, 0.3,  # right leg
    ]
)

REST_POSE = np.array(
    [
        [0.0, 0.0, 0.0],     # hip
        [0.0, 0.0, 1.0],     # spine
        [0.0, 0.0, 2.0],     # chest
        [0.0, 0.0, 2.8],     # neck
        [0.0, 0.0, 3.3],     # head
        [0.0, 0.8, 2.6],     # l_shoulder
        [0.0, 1.9, 2.6],     # l_elbow
        [0.0, 2.9, 2.6],     # l_wrist
        [0.0, 3.3, 2.6],     # l_hand
        [0.0, -0.8, 2.6],    # r_shoulder
        [0.0, -1.9, 2.6],    # r_elbow
        [0.0, -2.9, 2.6],    # r_wrist
        [0.0, -3.3, 2.6],    # r_hand
        [0.0, 0.5, -0.1],    # l_hip
        [0.0, 0.5, -1.8],    # l_knee
        [0.0, 0.5, -3.4],    # l_ankle
        [0.5, 0.5, -3.5],    # l_foot
        [0.0, -0.5, -0.1],   # r_hip
        [0.0, -0.5, -1.8],   # r_knee
        [0.0, -0.5, -3.4],   # r_ankle
        [0.5, -0.5, -3.5],   # r_foot
    ]
)


def joint_index(name):
    return JOINT_NAMES.index(name)


def normalize_pose(frames):
    """Translate the hip to the origin and scale hip-spine distance to 1.

    frames: [T, 21, 3] or [21, 3]. Returns the normalized copy.
    """
    frames = np.asarray(frames, dtype=np.float64)
    single = frames.ndim == 2
    if single:
        frames = frames[None]
    if frames.shape[1:] != (N_JOINTS, 3):
        raise ValueError(f"expected [T, {N_JOINTS}, 3] poses, got {frames.shape}")
    out = frames - frames[:, HIP : HIP + 1, :]
    spine_len = np.linalg.norm(out[:, SPINE, :], axis=1)
    if np.any(spine_len < 1e-9):
        raise ValueError("degenerate pose: spine coincides with hip")
    out = out / spine_len[:, None, None]
    return out[0] if single else out


def check_pose_invariants(frames, tol=1e-6):
    """True when the hip is at the origin and |spine| = 1 in every frame."""
    frames = np.asarray(frames)
    hip_ok = np.abs(frames[:, HIP, :]).max() <= tol
    spine_ok = np.abs(np.linalg.norm(frames[:, SPINE, :], axis=1) - 1.0).max() <= tol
    return bool(hip_ok and spine_ok)
