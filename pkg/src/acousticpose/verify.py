"""Gradient verification: every primitive op and the full training graph.

Each check builds a scalar loss from one op (projected against a fixed
random direction so every output coordinate matters) and compares analytic
gradients with central differences. Run in 64-bit mode; float32 has too
little headroom for the 1e-4 bar.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import losses, network
from .losses import LossWeights


def _proj_loss(out, key):
    # Projection is keyed, not drawn from a shared stream: gradcheck calls
    # the loss repeatedly and every call must see the same constant.
    c = np.random.default_rng(key).normal(size=out.shape)
    return ad.sum_(ad.mul(out, ad.Tensor(c)))


def op_gradchecks(seed=0, eps=1e-5, max_coords=24):
    """Gradcheck every primitive op on small random shapes.

    Returns a list of (op name, max relative error).
    """
    rng = np.random.default_rng(seed)
    results = []

    def check(name, make_params, f):
        key = 1000 * seed + len(results)
        params = make_params()
        err = ad.gradcheck(lambda: f(params, key), params, eps=eps,
                           max_coords=max_coords, seed=seed)
        results.append((name, err))

    def t(*shape, positive=False, away_from_zero=0.0):
        x = rng.normal(size=shape)
        if positive:
            x = np.abs(x) + 0.5
        if away_from_zero > 0:
            x = np.where(np.abs(x) < away_from_zero,
                         away_from_zero * np.sign(x) + (x == 0) * away_from_zero, x)
        return ad.Tensor(x, requires_grad=True)

    check("add", lambda: [t(3, 4), t(3, 4)],
          lambda p, k: _proj_loss(ad.add(p[0], p[1]), k))
    check("add_broadcast", lambda: [t(3, 4), t(4)],
          lambda p, k: _proj_loss(ad.add(p[0], p[1]), k))
    check("sub", lambda: [t(3, 4), t(1, 4)],
          lambda p, k: _proj_loss(ad.sub(p[0], p[1]), k))
    check("mul", lambda: [t(2, 3, 4), t(2, 3, 4)],
          lambda p, k: _proj_loss(ad.mul(p[0], p[1]), k))
    check("scalar_mul", lambda: [t(3, 4)],
          lambda p, k: _proj_loss(ad.scalar_mul(p[0], -1.7), k))
    check("matmul", lambda: [t(3, 4), t(4, 5)],
          lambda p, k: _proj_loss(ad.matmul(p[0], p[1]), k))
    check("matmul_batched", lambda: [t(2, 3, 4), t(2, 4, 5)],
          lambda p, k: _proj_loss(ad.matmul(p[0], p[1]), k))
    check("matmul_shared", lambda: [t(2, 3, 4), t(4, 5)],
          lambda p, k: _proj_loss(ad.matmul(p[0], p[1]), k))
    check("conv1d", lambda: [t(2, 3, 8), t(4, 3, 3), t(4)],
          lambda p, k: _proj_loss(ad.conv1d(p[0], p[1], p[2], stride=2, pad=1), k))
    check("conv2d", lambda: [t(2, 3, 6, 5), t(4, 3, 3, 1), t(4)],
          lambda p, k: _proj_loss(
              ad.conv2d(p[0], p[1], p[2], stride=(2, 1), pad=(1, 0)), k))
    check("conv1d_transpose", lambda: [t(2, 3, 5), t(3, 4, 2), t(4)],
          lambda p, k: _proj_loss(ad.conv1d_transpose(p[0], p[1], p[2], stride=2), k))
    check("relu", lambda: [t(4, 5, away_from_zero=0.2)],
          lambda p, k: _proj_loss(ad.relu(p[0]), k))
    check("gelu", lambda: [t(4, 5)],
          lambda p, k: _proj_loss(ad.gelu(p[0]), k))
    check("softmax", lambda: [t(3, 6)],
          lambda p, k: _proj_loss(ad.softmax(p[0], axis=-1), k))
    check("softmax_axis0", lambda: [t(3, 6)],
          lambda p, k: _proj_loss(ad.softmax(p[0], axis=0), k))
    check("log", lambda: [t(3, 4, positive=True)],
          lambda p, k: _proj_loss(ad.log(p[0]), k))
    check("exp", lambda: [t(3, 4)],
          lambda p, k: _proj_loss(ad.exp(p[0]), k))
    check("mean_all", lambda: [t(3, 4)],
          lambda p, k: ad.mean(p[0]))
    check("mean_axis", lambda: [t(2, 3, 4)],
          lambda p, k: _proj_loss(ad.mean(p[0], axis=1), k))
    check("sum_axis_keepdims", lambda: [t(2, 3, 4)],
          lambda p, k: _proj_loss(ad.sum_(p[0], axis=(0, 2), keepdims=True), k))
    check("concat", lambda: [t(2, 3), t(2, 5)],
          lambda p, k: _proj_loss(ad.concat(p, axis=1), k))
    check("slice", lambda: [t(4, 6)],
          lambda p, k: _proj_loss(
              ad.slice_(p[0], (slice(1, 3), slice(None, None, 2))), k))
    check("reshape", lambda: [t(4, 6)],
          lambda p, k: _proj_loss(ad.reshape(p[0], (2, 12)), k))
    check("transpose", lambda: [t(2, 3, 4)],
          lambda p, k: _proj_loss(ad.transpose(p[0], (2, 0, 1)), k))
    check("l2_normalize", lambda: [t(3, 5)],
          lambda p, k: _proj_loss(ad.l2_normalize(p[0], axis=-1), k))
    check("embedding_add", lambda: [t(2, 3, 4, 5), t(4, 5)],
          lambda p, k: _proj_loss(ad.embedding_add(p[0], p[1]), k))
    check("layer_norm", lambda: [t(2, 3, 4), t(1, 3, 1), t(1, 3, 1)],
          lambda p, k: _proj_loss(ad.layer_norm(p[0], p[1], p[2], axis=1), k))
    check("attention", lambda: [t(2, 4, 3), t(2, 5, 3), t(2, 5, 3)],
          lambda p, k: _proj_loss(
              ad.scaled_dot_product_attention(p[0], p[1], p[2])[0], k))
    return results


def tiny_model_config():
    """Smallest configuration exercising every architectural path."""
    return network.ModelConfig(
        n_mels=8,
        window_frames=4,
        latent_dim=8,
        pre_widths=(8,),
        post_widths=(8, 8),
        freq_strides=(2, 2),
        unet_width=8,
        head_hidden=8,
        cpe_dim=8,
    )


def full_graph_gradcheck(seed=0, eps=1e-5, max_coords=6):
    """Gradcheck the complete training loss through the whole network.

    Probes a seeded subset of coordinates in every parameter tensor.
    Returns the max relative error.
    """
    cfg = tiny_model_config()
    model = network.PoseModel(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    n = 2
    x = ad.Tensor(rng.normal(size=(n, cfg.in_channels, cfg.n_mels, cfg.window_frames)))
    m = ad.Tensor(rng.normal(size=(n, cfg.music_channels, cfg.n_mels, cfg.window_frames)))
    gt = ad.Tensor(rng.normal(size=(n, cfg.window_frames, cfg.out_dim)))
    weights = LossWeights()

    def loss_fn():
        out = model(x, m)
        l_pose = losses.pose_loss(out["pose"], gt)
        l_smooth = losses.smooth_loss(out["pose"], gt)
        z_pose = model.encode_pose(gt)
        l_cpe = losses.contrastive_loss(z_pose, out["z_audio"], weights.tau)
        return losses.total_loss(l_pose, l_smooth, l_cpe, weights)

    params = model.parameters()
    return ad.gradcheck(loss_fn, params, eps=eps, max_coords=max_coords, seed=seed)
