"""Training objective: pose regression, temporal smoothness, contrastive term.

All three losses are built from autodiff primitives so gradients flow end to
end. The contrastive loss is the symmetric InfoNCE over matched
pose/audio embedding pairs, computed with a numerically stable log-sum-exp
whose max shift is treated as a constant (the gradient is unaffected).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class LossWeights:
    w_alpha: float = 100.0  # smoothness weight
    w_beta: float = 1.0  # contrastive weight
    tau: float = 0.07  # similarity temperature

    def __post_init__(self):
        # Zero weights are legal (they switch a term off, e.g. the CPE
        # ablation); only the temperature must stay strictly positive.
        if self.w_alpha < 0 or self.w_beta < 0:
            raise ValueError("loss weights must be >= 0")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")


def pose_loss(pred, gt):
    """Mean squared error over every coordinate of every joint and frame."""
    pred, gt = ad._wrap(pred), ad._wrap(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pose shapes differ: {pred.shape} vs {gt.shape}")
    d = ad.sub(pred, gt)
    return ad.mean(ad.mul(d, d))


def smooth_loss(pred, gt):
    """MSE between predicted and true frame-to-frame displacements.

    Expects [N, T, ...] with the time axis second; constant offsets between
    pred and gt cancel out, only motion differences are penalized.
    """
    pred, gt = ad._wrap(pred), ad._wrap(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pose shapes differ: {pred.shape} vs {gt.shape}")
    if pred.shape[1] < 2:
        raise ValueError("smooth loss needs at least 2 frames")
    head = (slice(None), slice(1, None))
    tail = (slice(None), slice(0, -1))
    dp = ad.sub(ad.slice_(pred, head), ad.slice_(pred, tail))
    dg = ad.sub(ad.slice_(gt, head), ad.slice_(gt, tail))
    d = ad.sub(dp, dg)
    return ad.mean(ad.mul(d, d))


def _logsumexp_minus_diag(logits, axis):
    """sum_i [logsumexp(row_i or col_i) - diag_i], numerically stable."""
    shift = logits.data.max(axis=axis, keepdims=True)
    shift_t = ad.Tensor(shift)  # constant: shifting inside lse leaves grads exact
    lse = ad.add(
        ad.log(ad.sum_(ad.exp(ad.sub(logits, shift_t)), axis=axis)),
        ad.Tensor(shift.reshape(-1)),
    )
    eye = ad.Tensor(np.eye(logits.shape[0]))
    diag = ad.sum_(ad.mul(logits, eye), axis=axis)
    return ad.sum_(ad.sub(lse, diag))


def contrastive_loss(z_pose, z_audio, tau=0.07):
    """Symmetric InfoNCE over N matched pairs of unit embeddings.

    Row direction matches each pose against all audio embeddings, column
    direction the reverse; both are averaged over the 2N terms. Rows must be
    unit-norm (hypersphere contract).
    """
    z_pose, z_audio = ad._wrap(z_pose), ad._wrap(z_audio)
    if z_pose.shape != z_audio.shape or z_pose.ndim != 2:
        raise ValueError(
            f"expected matching [N, e] embeddings, got {z_pose.shape} / {z_audio.shape}"
        )
    for name, z in (("pose", z_pose), ("audio", z_audio)):
        norms = np.linalg.norm(z.data, axis=1)
        if np.abs(norms - 1.0).max() > 1e-3:
            raise ValueError(f"{name} embeddings are not unit-norm")
    n = z_pose.shape[0]
    logits = ad.scalar_mul(ad.matmul(z_pose, ad.transpose_last(z_audio)), 1.0 / tau)
    total = ad.add(
        _logsumexp_minus_diag(logits, axis=1),
        _logsumexp_minus_diag(logits, axis=0),
    )
    return ad.scalar_mul(total, 1.0 / (2.0 * n))


def total_loss(pose, smooth, cpe, weights):
    """pose + w_alpha * smooth + w_beta * cpe."""
    out = ad.add(pose, ad.scalar_mul(smooth, weights.w_alpha))
    if cpe is not None:
        out = ad.add(out, ad.scalar_mul(cpe, weights.w_beta))
    return out
