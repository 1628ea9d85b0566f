"""The pose estimation network.

Three stages:
  1. Frequency attention: per-time-step attention over frequency bins where
     the recorded features supply queries and values and the played-back
     music supplies keys, with one frequency embedding table shared by both
     branches. No attention across time; temporal structure is handled later.
  2. A time-wise 1D U-Net over the flattened frequency-channel feature.
  3. A small conv head emitting 63 coordinates (21 joints x 3) per frame.

The contrastive extraction encoders map ground-truth pose windows and audio
trunk features onto one unit hypersphere via learnable summary tokens, a
learnable time embedding, and a single self-attention layer each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import layers
from .layers import (
    Conv1d,
    ConvBlock1d,
    ConvBlock2d,
    ConvTranspose1d,
    Linear,
    Module,
)


@dataclass
class ModelConfig:
    n_mels: int = 128
    window_frames: int = 12
    in_channels: int = 11
    music_channels: int = 2
    latent_dim: int = 64  # d: width of the attention latent per frequency
    pre_widths: tuple = (32, 48)
    post_widths: tuple = (96, 128)
    freq_strides: tuple = (4, 4)
    unet_width: int = 128
    head_hidden: int = 128
    cpe_dim: int = 64  # e: contrastive embedding size
    n_joints: int = 21
    identity_attention: bool = False
    use_skips: bool = True
    detach_cpe: bool = False

    def __post_init__(self):
        if len(self.post_widths) != len(self.freq_strides):
            raise ValueError("post_widths and freq_strides must pair up")
        stride_prod = int(np.prod(self.freq_strides))
        if self.n_mels % stride_prod != 0:
            raise ValueError(
                f"n_mels={self.n_mels} not divisible by frequency strides "
                f"{self.freq_strides}"
            )
        if self.window_frames % 4 != 0:
            raise ValueError(
                f"window_frames={self.window_frames} must be divisible by 4 "
                "for the depth-2 time U-Net"
            )
        if min(self.latent_dim, self.cpe_dim, self.unet_width) < 1:
            raise ValueError("model widths must be positive")

    @property
    def mels_after_downsample(self):
        return self.n_mels // int(np.prod(self.freq_strides))

    @property
    def trunk_channels(self):
        return self.post_widths[-1] * self.mels_after_downsample

    @property
    def out_dim(self):
        return self.n_joints * 3


def _pre_stack(rng, in_ch, widths, d):
    """Three stride-1 conv blocks over frequency only: in_ch -> ... -> d."""
    chain = [in_ch, *widths, d]
    return [
        ConvBlock2d(rng, chain[i], chain[i + 1], k=(3, 1), pad=(1, 0))
        for i in range(len(chain) - 1)
    ]


class FrequencyAttention(Module):
    """Attention over frequency bins at each time step, plus downsampling."""

    def __init__(self, rng, cfg):
        super().__init__()
        self.cfg = cfg
        d = cfg.latent_dim
        for i, blk in enumerate(_pre_stack(rng, cfg.in_channels, cfg.pre_widths, d)):
            self.child(f"x_pre{i}", blk)
        for i, blk in enumerate(_pre_stack(rng, cfg.music_channels, cfg.pre_widths, d)):
            self.child(f"m_pre{i}", blk)
        self.freq_emb = self.param("freq_emb", layers.token_init(rng, (cfg.n_mels, d)))
        self.wq = self.param("wq", layers._fan_in_uniform(rng, (d, d), d))
        self.wk = self.param("wk", layers._fan_in_uniform(rng, (d, d), d))
        self.wv = self.param("wv", layers._fan_in_uniform(rng, (d, d), d))
        self.wo = self.param("wo", layers._fan_in_uniform(rng, (d, d), d))
        ch = d
        for i, (width, stride) in enumerate(zip(cfg.post_widths, cfg.freq_strides)):
            self.child(
                f"post{i}",
                ConvBlock2d(rng, ch, width, k=(stride, 1), stride=(stride, 1)),
            )
            ch = width

    def __call__(self, x, m):
        """x [N,11,b,T], m [N,2,b,T] -> (trunk [N, C, T], attention or None)."""
        if x.shape[-1] != m.shape[-1]:
            raise ValueError(
                f"recorded/music frame counts differ: {x.shape[-1]} vs {m.shape[-1]}"
            )
        cfg = self.cfg
        xp = x
        mp = m
        for i in range(len(cfg.pre_widths) + 1):
            xp = self._children[f"x_pre{i}"](xp)
            mp = self._children[f"m_pre{i}"](mp)
        # [N, d, b, T] -> [N, T, b, d]: attention treats each time step alone.
        xh = ad.transpose(xp, (0, 3, 2, 1))
        mh = ad.transpose(mp, (0, 3, 2, 1))
        xh = ad.embedding_add(xh, self.freq_emb)
        mh = ad.embedding_add(mh, self.freq_emb)

        if cfg.identity_attention:
            attended, attn = xh, None
        else:
            q = ad.matmul(xh, self.wq)
            k = ad.matmul(mh, self.wk)
            v = ad.matmul(xh, self.wv)
            out, attn = ad.scaled_dot_product_attention(q, k, v)
            attended = ad.add(xh, ad.gelu(ad.matmul(out, self.wo)))

        y = ad.transpose(attended, (0, 3, 2, 1))
        for i in range(len(cfg.post_widths)):
            y = self._children[f"post{i}"](y)
        n, c, b_ds, t = y.shape
        return ad.reshape(y, (n, c * b_ds, t)), attn


class TimeUNet(Module):
    """Depth-2 encoder/decoder over the time axis with skip connections."""

    def __init__(self, rng, in_ch, width, use_skips=True):
        super().__init__()
        self.skip_scale = 1.0 if use_skips else 0.0
        w = width
        self.stem = self.child("stem", ConvBlock1d(rng, in_ch, w, k=1))
        self.enc1 = self.child("enc1", ConvBlock1d(rng, w, w, k=3, pad=1))
        self.down1 = self.child("down1", ConvBlock1d(rng, w, 2 * w, k=2, stride=2))
        self.enc2 = self.child("enc2", ConvBlock1d(rng, 2 * w, 2 * w, k=3, pad=1))
        self.down2 = self.child("down2", ConvBlock1d(rng, 2 * w, 2 * w, k=2, stride=2))
        self.bottom = self.child("bottom", ConvBlock1d(rng, 2 * w, 2 * w, k=3, pad=1))
        self.up1 = self.child("up1", ConvTranspose1d(rng, 2 * w, 2 * w, k=2, stride=2))
        self.dec1 = self.child("dec1", ConvBlock1d(rng, 4 * w, 2 * w, k=3, pad=1))
        self.up2 = self.child("up2", ConvTranspose1d(rng, 2 * w, w, k=2, stride=2))
        self.dec2 = self.child("dec2", ConvBlock1d(rng, 2 * w, w, k=3, pad=1))

    def __call__(self, x):
        e1 = self.enc1(self.stem(x))
        e2 = self.enc2(self.down1(e1))
        bottom = self.bottom(self.down2(e2))
        d1 = self.dec1(
            ad.concat([self.up1(bottom), ad.scalar_mul(e2, self.skip_scale)], axis=1)
        )
        d2 = self.dec2(
            ad.concat([self.up2(d1), ad.scalar_mul(e1, self.skip_scale)], axis=1)
        )
        return d2


class TokenSummaryEncoder(Module):
    """Summary-token encoder: conv, token prepend, time embedding, one
    self-attention layer, unit-norm projection of the token output."""

    def __init__(self, rng, in_ch, e, t_frames, conv_k=1):
        super().__init__()
        pad = (conv_k - 1) // 2
        self.proj = self.child("proj", Conv1d(rng, in_ch, e, k=conv_k, pad=pad))
        self.token = self.param("token", layers.token_init(rng, (1, 1, e)))
        self.time_emb = self.param(
            "time_emb", layers.token_init(rng, (t_frames + 1, e))
        )
        self.wq = self.param("wq", layers._fan_in_uniform(rng, (e, e), e))
        self.wk = self.param("wk", layers._fan_in_uniform(rng, (e, e), e))
        self.wv = self.param("wv", layers._fan_in_uniform(rng, (e, e), e))
        self.out = self.child("out", Linear(rng, e, e))

    def __call__(self, x):
        """x [N, C, T] -> unit embedding [N, e]."""
        n = x.shape[0]
        feats = ad.transpose(self.proj(x), (0, 2, 1))  # [N, T, e]
        tok = ad.add(self.token, ad.Tensor(np.zeros((n, 1, feats.shape[2]))))
        seq = ad.concat([tok, feats], axis=1)
        seq = ad.embedding_add(seq, self.time_emb)
        q = ad.matmul(seq, self.wq)
        k = ad.matmul(seq, self.wk)
        v = ad.matmul(seq, self.wv)
        att, _ = ad.scaled_dot_product_attention(q, k, v)
        summary = ad.slice_(att, (slice(None), 0, slice(None)))
        return ad.l2_normalize(self.out(summary), axis=-1)


class PoseModel(Module):
    """End-to-end network plus the two contrastive encoders."""

    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.fa = self.child("fa", FrequencyAttention(rng, cfg))
        self.unet = self.child(
            "unet",
            TimeUNet(rng, cfg.trunk_channels, cfg.unet_width, cfg.use_skips),
        )
        self.head_hidden = self.child(
            "head_hidden", ConvBlock1d(rng, cfg.unet_width, cfg.head_hidden, k=3, pad=1)
        )
        self.head_out = self.child("head_out", Conv1d(rng, cfg.head_hidden, cfg.out_dim, k=1))
        # Output head starts near zero: the first optimizer steps then settle
        # the mean pose into the head bias instead of crushing the trunk's
        # input sensitivity (a constant trunk is a stable basin this network
        # cannot climb out of).
        self.head_out.w.data *= 0.01
        self.audio_enc = self.child(
            "audio_enc",
            TokenSummaryEncoder(rng, cfg.trunk_channels, cfg.cpe_dim, cfg.window_frames),
        )
        self.pose_enc = self.child(
            "pose_enc",
            TokenSummaryEncoder(
                rng, cfg.out_dim, cfg.cpe_dim, cfg.window_frames, conv_k=3
            ),
        )

    def __call__(self, x, m):
        """x [N,11,b,T], m [N,2,b,T] -> dict with pose [N,T,63], z_audio [N,e]."""
        trunk, attn = self.fa(x, m)
        hid = self.unet(trunk)
        pose = ad.transpose(self.head_out(self.head_hidden(hid)), (0, 2, 1))
        cpe_in = trunk.detach() if self.cfg.detach_cpe else trunk
        z_audio = self.audio_enc(cpe_in)
        return {"pose": pose, "z_audio": z_audio, "attn": attn, "trunk": trunk}

    def encode_pose(self, pose):
        """Ground-truth pose window [N, T, 63] -> unit embedding [N, e]."""
        return self.pose_enc(ad.transpose(pose, (0, 2, 1)))
