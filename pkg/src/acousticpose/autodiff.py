"""Reverse-mode automatic differentiation over dense numpy tensors.

Define-by-run: every operation records its parents and a backward closure;
``Tensor.backward()`` topologically sorts the recorded graph and accumulates
gradients into the leaves. The op set is exactly what the pose network needs,
nothing speculative. All data lives in one global default dtype (float64 for
verification, float32 for training throughput); no op mutates an input that
participates in a graph.
"""

from __future__ import annotations

import contextlib
import json
import math
import os

import numpy as np

from . import kernels

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


def set_default_dtype(name):
    """Global run mode: 'float64' for tests/verification, 'float32' for training."""
    global _DEFAULT_DTYPE
    if name in ("float64", np.float64):
        _DEFAULT_DTYPE = np.float64
    elif name in ("float32", np.float32):
        _DEFAULT_DTYPE = np.float32
    else:
        raise ValueError(f"unsupported dtype {name!r}")


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(g, shape):
    """Reduce gradient g back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A dense array plus the tape edges needed to differentiate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), name=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = None
        self.name = name

    # -- bookkeeping --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    track = _GRAD_ENABLED and any(
        p.requires_grad or p._parents for p in parents
    )
    out = Tensor(data)
    if track:
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# -- arithmetic ---------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        a._accum(_unbroadcast(g, a.data.shape))
        b._accum(_unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def backward(g):
        a._accum(_unbroadcast(g, a.data.shape))
        b._accum(_unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        a._accum(_unbroadcast(g * b.data, a.data.shape))
        b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def scalar_mul(a, s):
    a = _wrap(a)
    s = float(s)
    data = a.data * s

    def backward(g):
        a._accum(g * s)

    return _node(data, (a,), backward)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        a._accum(_unbroadcast(ga, a.data.shape))
        b._accum(_unbroadcast(gb, b.data.shape))

    return _node(data, (a, b), backward)


# -- activations ---------------------------------------------------------------

def relu(a):
    a = _wrap(a)
    mask = a.data > 0
    data = a.data * mask

    def backward(g):
        a._accum(g * mask)

    return _node(data, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """Tanh-form GELU; forward and backward derive from the same expression."""
    a = _wrap(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        a._accum(g * grad)

    return _node(data, (a,), backward)


def softmax(a, axis=-1):
    a = _wrap(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        a._accum(s * (g - dot))

    return _node(s, (a,), backward)


def log(a):
    a = _wrap(a)
    data = np.log(a.data)

    def backward(g):
        a._accum(g / a.data)

    return _node(data, (a,), backward)


def exp(a):
    a = _wrap(a)
    data = np.exp(a.data)

    def backward(g):
        a._accum(g * data)

    return _node(data, (a,), backward)


# -- reductions and shape ops ---------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.data.ndim for ax in axes)
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        a._accum(np.broadcast_to(gg, a.data.shape).copy())

    return _node(data, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / data.size

    def backward(g):
        gg = np.asarray(g) / count
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.data.ndim for ax in axes)
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        a._accum(np.broadcast_to(gg, a.data.shape).copy())

    return _node(data, (a,), backward)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, size in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + size)
            t._accum(g[tuple(idx)])
            start += size

    return _node(data, tuple(tensors), backward)


def slice_(a, key):
    a = _wrap(a)
    data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        a._accum(full)

    return _node(data, (a,), backward)


def reshape(a, shape):
    a = _wrap(a)
    data = a.data.reshape(shape)

    def backward(g):
        a._accum(g.reshape(a.data.shape))

    return _node(data, (a,), backward)


def transpose(a, axes=None):
    a = _wrap(a)
    data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def backward(g):
        a._accum(np.transpose(g, inv))

    return _node(data, (a,), backward)


# -- normalization and attention --------------------------------------------------

def l2_normalize(a, axis=-1, eps=1e-12):
    a = _wrap(a)
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True) + eps)
    y = a.data / n

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        a._accum((g - y * dot) / n)

    return _node(y, (a,), backward)


def layer_norm(a, gamma, beta, axis=-1, eps=1e-5):
    """Normalize over one axis; gamma/beta must broadcast against the input."""
    a, gamma, beta = _wrap(a), _wrap(gamma), _wrap(beta)
    mu = a.data.mean(axis=axis, keepdims=True)
    var = a.data.var(axis=axis, keepdims=True)
    s = np.sqrt(var + eps)
    xhat = (a.data - mu) / s
    data = xhat * gamma.data + beta.data
    m = a.data.shape[axis]

    def backward(g):
        gg = g * gamma.data
        term = gg - gg.mean(axis=axis, keepdims=True) - xhat * (gg * xhat).mean(
            axis=axis, keepdims=True
        )
        a._accum(term / s)
        gamma._accum(_unbroadcast(g * xhat, gamma.data.shape))
        beta._accum(_unbroadcast(g, beta.data.shape))

    return _node(data, (a, gamma, beta), backward)


def embedding_add(a, emb):
    """Add a learnable embedding table, broadcasting over leading axes."""
    return add(a, emb)


def scaled_dot_product_attention(q, k, v):
    """softmax(q kᵀ / sqrt(d)) v over the last two axes.

    q, v: [..., n, d]; k: [..., m, d]. Returns (output [..., n, d],
    attention weights [..., n, m]). Built from primitive ops, so gradients
    come for free.
    """
    d = q.shape[-1]
    logits = scalar_mul(matmul(q, transpose_last(k)), 1.0 / math.sqrt(d))
    attn = softmax(logits, axis=-1)
    return matmul(attn, v), attn


def transpose_last(a):
    """Swap the last two axes, leaving batch axes alone."""
    a = _wrap(a)
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


# -- convolutions -----------------------------------------------------------------

def conv1d(x, w, b=None, stride=1, pad=0):
    """x [N,C,L] * w [O,C,K] (+ b [O]) -> [N,O,Lo]."""
    x, w = _wrap(x), _wrap(w)
    bt = _wrap(b) if b is not None else None
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    data = kernels.conv1d_forward(xd, wd, bt.data if bt is not None else None, stride, pad)

    def backward(g):
        gx, gw, gb = kernels.conv1d_backward(xd, wd, stride, pad, np.ascontiguousarray(g))
        x._accum(gx)
        w._accum(gw)
        if bt is not None:
            bt._accum(gb)

    parents = (x, w, bt) if bt is not None else (x, w)
    return _node(data, parents, backward)


def conv2d(x, w, b=None, stride=(1, 1), pad=(0, 0)):
    """x [N,C,H,W] * w [O,C,Kh,Kw] (+ b [O]) -> [N,O,Ho,Wo]."""
    x, w = _wrap(x), _wrap(w)
    bt = _wrap(b) if b is not None else None
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    data = kernels.conv2d_forward(xd, wd, bt.data if bt is not None else None, stride, pad)

    def backward(g):
        gx, gw, gb = kernels.conv2d_backward(xd, wd, stride, pad, np.ascontiguousarray(g))
        x._accum(gx)
        w._accum(gw)
        if bt is not None:
            bt._accum(gb)

    parents = (x, w, bt) if bt is not None else (x, w)
    return _node(data, parents, backward)


def conv1d_transpose(x, w, b=None, stride=1):
    """x [N,C,L] * w [C,O,K] (+ b [O]) -> [N,O,(L-1)*stride+K]."""
    x, w = _wrap(x), _wrap(w)
    bt = _wrap(b) if b is not None else None
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    data = kernels.conv1d_transpose_forward(
        xd, wd, bt.data if bt is not None else None, stride
    )

    def backward(g):
        gx, gw, gb = kernels.conv1d_transpose_backward(
            xd, wd, stride, np.ascontiguousarray(g)
        )
        x._accum(gx)
        w._accum(gw)
        if bt is not None:
            bt._accum(gb)

    parents = (x, w, bt) if bt is not None else (x, w)
    return _node(data, parents, backward)


# -- gradient verification ----------------------------------------------------------

def gradcheck(f, params, eps=1e-5, max_coords=64, seed=0):
    """Max relative error between analytic and central-difference gradients.

    f: callable returning a scalar Tensor computed from params (list of
    Tensors with requires_grad). Large tensors are probed on a seeded random
    subset of max_coords coordinates to bound runtime.
    """
    for p in params:
        p.zero_grad()
    out = f()
    out.backward()
    analytic = [np.array(p.grad, copy=True) for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            hi = float(f().data)
            flat[c] = orig - eps
            lo = float(f().data)
            flat[c] = orig
            fd = (hi - lo) / (2.0 * eps)
            an = float(a.reshape(-1)[c])
            rel = abs(an - fd) / max(1.0, abs(an))
            worst = max(worst, rel)
    for p in params:
        p.zero_grad()
    return worst


# -- checkpoints ----------------------------------------------------------------------

def save_checkpoint(path, named_tensors, meta=None):
    """Write named arrays as one flat binary + JSON index {name, shape, dtype}."""
    entries = []
    offset = 0
    blobs = []
    for name in sorted(named_tensors):
        arr = np.ascontiguousarray(
            named_tensors[name].data
            if isinstance(named_tensors[name], Tensor)
            else named_tensors[name]
        )
        dtype = "float64" if arr.dtype == np.float64 else "float32"
        blob = arr.astype("<f8" if dtype == "float64" else "<f4").tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    index = {"tensors": entries, "meta": meta or {}}
    with open(path, "wb") as f:
        for blob in blobs:
            f.write(blob)
    base, _ = os.path.splitext(str(path))
    with open(base + ".json", "w") as f:
        json.dump(index, f, indent=1)
        f.write("\n")


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint. Returns (dict, meta)."""
    base, _ = os.path.splitext(str(path))
    with open(base + ".json") as f:
        index = json.load(f)
    with open(path, "rb") as f:
        raw = f.read()
    out = {}
    for entry in index["tensors"]:
        dtype = "<f8" if entry["dtype"] == "float64" else "<f4"
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(
            raw, dtype=dtype, count=count, offset=entry["offset"]
        ).reshape(entry["shape"])
        out[entry["name"]] = arr.astype(np.dtype(dtype).newbyteorder("="))
    return out, index.get("meta", {})
