"""Trainable layer primitives on top of the autodiff tensor.

Modules register parameters and children explicitly; ``named_parameters``
walks the tree, which is all the training loop and checkpoint code need.
Convolutions and projections use fan-in-scaled uniform initialization; token
and embedding tables use small Gaussians.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad


class Module:
    def __init__(self):
        self._params = {}
        self._children = {}

    def param(self, name, array):
        t = ad.Tensor(np.asarray(array), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for cname, c in self._children.items():
            yield from c.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {name: np.array(p.data, copy=True) for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ValueError(
                f"parameter name mismatch: missing {sorted(missing)}, extra {sorted(extra)}"
            )
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"{name}: checkpoint shape {arr.shape} != model shape {p.data.shape}"
                )
            p.data = arr.astype(ad.get_default_dtype())

    def n_parameters(self):
        return sum(p.size for p in self.parameters())


def _fan_in_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def token_init(rng, shape, std=0.02):
    return rng.normal(0.0, std, size=shape)


class Conv1d(Module):
    def __init__(self, rng, in_ch, out_ch, k, stride=1, pad=0, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = pad
        self.w = self.param("w", _fan_in_uniform(rng, (out_ch, in_ch, k), in_ch * k))
        self.b = self.param("b", np.zeros(out_ch)) if bias else None

    def __call__(self, x):
        return ad.conv1d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class Conv2d(Module):
    def __init__(self, rng, in_ch, out_ch, k, stride=(1, 1), pad=(0, 0), bias=True):
        super().__init__()
        kh, kw = k
        self.stride = stride
        self.pad = pad
        self.w = self.param(
            "w", _fan_in_uniform(rng, (out_ch, in_ch, kh, kw), in_ch * kh * kw)
        )
        self.b = self.param("b", np.zeros(out_ch)) if bias else None

    def __call__(self, x):
        return ad.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class ConvTranspose1d(Module):
    def __init__(self, rng, in_ch, out_ch, k, stride=1, bias=True):
        super().__init__()
        self.stride = stride
        self.w = self.param("w", _fan_in_uniform(rng, (in_ch, out_ch, k), in_ch * k))
        self.b = self.param("b", np.zeros(out_ch)) if bias else None

    def __call__(self, x):
        return ad.conv1d_transpose(x, self.w, self.b, stride=self.stride)


class Linear(Module):
    def __init__(self, rng, in_dim, out_dim, bias=True):
        super().__init__()
        self.w = self.param("w", _fan_in_uniform(rng, (in_dim, out_dim), in_dim))
        self.b = self.param("b", np.zeros(out_dim)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.w)
        if self.b is not None:
            y = ad.add(y, self.b)
        return y


class ChannelNorm(Module):
    """Layer normalization over the channel axis of conv feature maps.

    Works for [N, C, ...] inputs of any spatial rank; batch-size independent.
    """

    def __init__(self, n_ch):
        super().__init__()
        self.n_ch = n_ch
        self.gamma = self.param("gamma", np.ones(n_ch))
        self.beta = self.param("beta", np.zeros(n_ch))

    def __call__(self, x):
        shape = (1, self.n_ch) + (1,) * (x.ndim - 2)
        g = ad.reshape(self.gamma, shape)
        b = ad.reshape(self.beta, shape)
        return ad.layer_norm(x, g, b, axis=1)


class ConvBlock2d(Module):
    """conv2d -> channel norm -> ReLU."""

    def __init__(self, rng, in_ch, out_ch, k, stride=(1, 1), pad=(0, 0)):
        super().__init__()
        self.conv = self.child("conv", Conv2d(rng, in_ch, out_ch, k, stride, pad))
        self.norm = self.child("norm", ChannelNorm(out_ch))

    def __call__(self, x):
        return ad.relu(self.norm(self.conv(x)))


class ConvBlock1d(Module):
    """conv1d -> channel norm -> ReLU."""

    def __init__(self, rng, in_ch, out_ch, k, stride=1, pad=0):
        super().__init__()
        self.conv = self.child("conv", Conv1d(rng, in_ch, out_ch, k, stride, pad))
        self.norm = self.child("norm", ChannelNorm(out_ch))

    def __call__(self, x):
        return ad.relu(self.norm(self.conv(x)))
