"""Pose accuracy metrics and report files.

Headline RMSE/MAE are per-coordinate (mean over every x/y/z of every joint of
every frame); per-joint mean Euclidean distances are reported alongside for
diagnostics. PCKh counts a joint correct when its Euclidean error is below
half the ground-truth head-neck bone length of its frame.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import skeleton


def _to_joints(arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape[-1] == skeleton.N_JOINTS * 3:
        arr = arr.reshape(arr.shape[:-1] + (skeleton.N_JOINTS, 3))
    if arr.shape[-2:] != (skeleton.N_JOINTS, 3):
        raise ValueError(f"cannot interpret shape {arr.shape} as joint coordinates")
    return arr.reshape(-1, skeleton.N_JOINTS, 3)


def joint_errors(pred, gt):
    """Per-coordinate rmse/mae plus per-joint Euclidean means.

    Accepts [..., T, 63] or [..., T, 21, 3]; leading axes are flattened.
    """
    p = _to_joints(pred)
    g = _to_joints(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} != ground truth {g.shape}")
    diff = p - g
    rmse = float(np.sqrt((diff * diff).mean()))
    mae = float(np.abs(diff).mean())
    per_joint = np.linalg.norm(diff, axis=2).mean(axis=0)
    return {
        "rmse": rmse,
        "mae": mae,
        "per_joint": per_joint.tolist(),
        "n_frames": int(p.shape[0]),
    }


def pckh05(pred, gt, ratio=0.5):
    """Fraction of joints within ratio x head-neck length of the truth.

    Frames whose ground-truth head and neck coincide have no scale and are
    excluded (their count is reported). Returns (fraction, excluded, total).
    """
    p = _to_joints(pred)
    g = _to_joints(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} != ground truth {g.shape}")
    head_neck = np.linalg.norm(
        g[:, skeleton.HEAD, :] - g[:, skeleton.NECK, :], axis=1
    )
    valid = head_neck > 1e-12
    excluded = int((~valid).sum())
    if not valid.any():
        raise ValueError("every frame has a degenerate head-neck link")
    dist = np.linalg.norm(p - g, axis=2)
    thresh = ratio * head_neck
    correct = dist[valid] < thresh[valid, None]
    return float(correct.mean()), excluded, int(valid.sum())


@dataclass
class MetricReport:
    rmse: float
    mae: float
    pckh05: float
    per_joint: list
    n_windows: int
    n_frames: int
    excluded_frames: int
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def evaluate_arrays(pred, gt, n_windows=None, extras=None):
    err = joint_errors(pred, gt)
    frac, excluded, _ = pckh05(pred, gt)
    return MetricReport(
        rmse=err["rmse"],
        mae=err["mae"],
        pckh05=frac,
        per_joint=err["per_joint"],
        n_windows=int(n_windows if n_windows is not None else len(np.asarray(pred))),
        n_frames=err["n_frames"],
        excluded_frames=excluded,
        extras=extras or {},
    )


def mean_pose(gt_windows):
    """Average pose over all frames of the given windows: the do-nothing
    baseline a trained model has to beat."""
    g = np.asarray(gt_windows, dtype=np.float64)
    return g.reshape(-1, g.shape[-1]).mean(axis=0)


def baseline_report(train_gt, eval_gt):
    """Metrics of the constant mean-pose predictor fitted on train_gt."""
    base = mean_pose(train_gt)
    eval_gt = np.asarray(eval_gt, dtype=np.float64)
    pred = np.broadcast_to(base, eval_gt.shape)
    return evaluate_arrays(pred, eval_gt, n_windows=eval_gt.shape[0])


def write_report(report, out_dir, name="metrics"):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{name}.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=1)
        f.write("\n")
    with open(os.path.join(out_dir, "per_joint.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["joint", "mean_euclidean_error"])
        for name_j, err in zip(skeleton.JOINT_NAMES, report.per_joint):
            w.writerow([name_j, f"{err:.8g}"])
