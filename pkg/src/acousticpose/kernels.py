"""Hot numeric kernels, each with a numba ``@njit`` variant and a pure-numpy twin.

The two variants of every kernel compute the same quantity; the numba versions
are plain loops (parallelized so that each output cell has a single writer,
which keeps results deterministic under threading), the numpy versions use
im2col/einsum formulations. Backend choice lives in :mod:`acousticpose.accel`;
``benchmarks/bench_kernels.py`` compares the two paths.

Shapes follow the usual channel-first conventions:
  conv1d            x[N,C,L]   w[O,C,K]    -> y[N,O,Lo]
  conv2d            x[N,C,H,W] w[O,C,Kh,Kw]-> y[N,O,Ho,Wo]
  conv1d_transpose  x[N,C,L]   w[C,O,K]    -> y[N,O,(L-1)*s+K]
"""

from __future__ import annotations

import math

import numpy as np

from . import accel

SQRT1_2 = math.sqrt(0.5)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _pad1d(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p)))


def _pad2d(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _cols1d(xp, k, s, lo):
    n, c, _ = xp.shape
    sn, sc, sl = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, k, lo), strides=(sn, sc, sl, sl * s), writeable=False
    )
    return view


def conv1d_forward_np(x, w, b, stride, pad):
    n, c, l = x.shape
    o, _, k = w.shape
    xp = _pad1d(x, pad)
    lo = (l + 2 * pad - k) // stride + 1
    cols = np.ascontiguousarray(_cols1d(xp, k, stride, lo)).reshape(n, c * k, lo)
    y = w.reshape(o, c * k) @ cols
    if b is not None:
        y = y + b[None, :, None]
    return y


def conv1d_backward_np(x, w, stride, pad, gy):
    n, c, l = x.shape
    o, _, k = w.shape
    lo = gy.shape[2]
    xp = _pad1d(x, pad)
    cols = np.ascontiguousarray(_cols1d(xp, k, stride, lo)).reshape(n, c * k, lo)
    gb = gy.sum(axis=(0, 2))
    gw = (gy @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(o, c, k)
    gcols = (w.reshape(o, c * k).T @ gy).reshape(n, c, k, lo)
    gxp = np.zeros_like(xp)
    for kk in range(k):
        gxp[:, :, kk : kk + stride * (lo - 1) + 1 : stride] += gcols[:, :, kk, :]
    gx = gxp[:, :, pad : pad + l] if pad else gxp
    return gx, gw, gb


def _cols2d(xp, kh, kw, sh, sw, ho, wo):
    n, c, _, _ = xp.shape
    sn, sc, srow, scol = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, srow, scol, srow * sh, scol * sw),
        writeable=False,
    )
    return view


def conv2d_forward_np(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    xp = _pad2d(x, ph, pw)
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    cols = np.ascontiguousarray(_cols2d(xp, kh, kw, sh, sw, ho, wo))
    cols = cols.reshape(n, c * kh * kw, ho * wo)
    y = (w.reshape(o, c * kh * kw) @ cols).reshape(n, o, ho, wo)
    if b is not None:
        y = y + b[None, :, None, None]
    return y


def conv2d_backward_np(x, w, stride, pad, gy):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    ho, wo = gy.shape[2], gy.shape[3]
    xp = _pad2d(x, ph, pw)
    cols = np.ascontiguousarray(_cols2d(xp, kh, kw, sh, sw, ho, wo))
    cols = cols.reshape(n, c * kh * kw, ho * wo)
    gyf = gy.reshape(n, o, ho * wo)
    gb = gy.sum(axis=(0, 2, 3))
    gw = (gyf @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(o, c, kh, kw)
    gcols = (w.reshape(o, -1).T @ gyf).reshape(n, c, kh, kw, ho, wo)
    gxp = np.zeros_like(xp)
    for ih in range(kh):
        hs = slice(ih, ih + sh * (ho - 1) + 1, sh)
        for iw in range(kw):
            ws = slice(iw, iw + sw * (wo - 1) + 1, sw)
            gxp[:, :, hs, ws] += gcols[:, :, ih, iw, :, :]
    gx = gxp[:, :, ph : ph + h, pw : pw + wd] if (ph or pw) else gxp
    return gx, gw, gb


def conv1d_transpose_forward_np(x, w, b, stride):
    n, c, l = x.shape
    _, o, k = w.shape
    lt = (l - 1) * stride + k
    y = np.zeros((n, o, lt), dtype=x.dtype)
    for kk in range(k):
        y[:, :, kk : kk + stride * (l - 1) + 1 : stride] += np.einsum(
            "ncl,co->nol", x, w[:, :, kk], optimize=True
        )
    if b is not None:
        y += b[None, :, None]
    return y


def conv1d_transpose_backward_np(x, w, stride, gy):
    n, c, l = x.shape
    _, o, k = w.shape
    gb = gy.sum(axis=(0, 2))
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for kk in range(k):
        gy_k = gy[:, :, kk : kk + stride * (l - 1) + 1 : stride]
        gx += np.einsum("nol,co->ncl", gy_k, w[:, :, kk], optimize=True)
        gw[:, :, kk] = np.einsum("ncl,nol->co", x, gy_k, optimize=True)
    return gx, gw, gb


def scatter_render_np(src, delays, gains, dirs, knot_hop, sample_rate, out):
    """Accumulate time-varying delayed/attenuated/direction-encoded paths.

    src          [S]      source signal
    delays       [P,Kn]   per-path delay in seconds at each knot
    gains        [P,Kn]   per-path gain at each knot
    dirs         [P,Kn,3] arrival direction (unit vectors) at each knot
    knot_hop     samples between successive knots
    out          [S,4]    (w,x,y,z) accumulator, modified in place
    """
    s_len = src.shape[0]
    n_paths, n_knots = delays.shape
    n = np.arange(s_len)
    pos = n / knot_hop
    k = np.minimum(pos.astype(np.int64), n_knots - 2)
    a = np.minimum(pos - k, 1.0)
    for p in range(n_paths):
        d = (1.0 - a) * delays[p, k] + a * delays[p, k + 1]
        g = (1.0 - a) * gains[p, k] + a * gains[p, k + 1]
        sp = n - d * sample_rate
        si = np.floor(sp).astype(np.int64)
        frac = sp - si
        valid = (si >= 0) & (si < s_len - 1)
        sic = np.clip(si, 0, s_len - 2)
        sval = np.where(valid, (1.0 - frac) * src[sic] + frac * src[sic + 1], 0.0)
        gs = g * sval
        dvec = (1.0 - a)[:, None] * dirs[p, k] + a[:, None] * dirs[p, k + 1]
        out[:, 0] += gs * SQRT1_2
        out[:, 1] += gs * dvec[:, 0]
        out[:, 2] += gs * dvec[:, 1]
        out[:, 3] += gs * dvec[:, 2]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if accel.NUMBA_AVAILABLE:
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def _conv1d_forward_nb(x, w, b, stride, pad, y):
        n, c, l = x.shape
        o, _, k = w.shape
        lo = y.shape[2]
        for ni in prange(n):
            for oi in range(o):
                for li in range(lo):
                    acc = b[oi]
                    base = li * stride - pad
                    for ci in range(c):
                        for ki in range(k):
                            src = base + ki
                            if 0 <= src < l:
                                acc += x[ni, ci, src] * w[oi, ci, ki]
                    y[ni, oi, li] = acc

    @njit(cache=True, parallel=True)
    def _conv1d_dx_nb(w, stride, pad, gy, gx):
        n, o, lo = gy.shape
        _, c, k = w.shape
        l = gx.shape[2]
        for ni in prange(n):
            for oi in range(o):
                for li in range(lo):
                    g = gy[ni, oi, li]
                    base = li * stride - pad
                    for ci in range(c):
                        for ki in range(k):
                            src = base + ki
                            if 0 <= src < l:
                                gx[ni, ci, src] += g * w[oi, ci, ki]

    @njit(cache=True, parallel=True)
    def _conv1d_dw_nb(x, stride, pad, gy, gw, gb):
        n, o, lo = gy.shape
        _, c, l = x.shape
        k = gw.shape[2]
        for oi in prange(o):
            for ni in range(n):
                for li in range(lo):
                    g = gy[ni, oi, li]
                    gb[oi] += g
                    base = li * stride - pad
                    for ci in range(c):
                        for ki in range(k):
                            src = base + ki
                            if 0 <= src < l:
                                gw[oi, ci, ki] += g * x[ni, ci, src]

    @njit(cache=True, parallel=True)
    def _conv2d_forward_nb(x, w, b, sh, sw, ph, pw, y):
        n, c, h, wd = x.shape
        o, _, kh, kw = w.shape
        ho, wo = y.shape[2], y.shape[3]
        for ni in prange(n):
            for oi in range(o):
                for hi in range(ho):
                    hb = hi * sh - ph
                    for wi in range(wo):
                        wb = wi * sw - pw
                        acc = b[oi]
                        for ci in range(c):
                            for khi in range(kh):
                                sr = hb + khi
                                if sr < 0 or sr >= h:
                                    continue
                                for kwi in range(kw):
                                    sc = wb + kwi
                                    if 0 <= sc < wd:
                                        acc += x[ni, ci, sr, sc] * w[oi, ci, khi, kwi]
                        y[ni, oi, hi, wi] = acc

    @njit(cache=True, parallel=True)
    def _conv2d_dx_nb(w, sh, sw, ph, pw, gy, gx):
        n, o, ho, wo = gy.shape
        _, c, kh, kw = w.shape
        h, wd = gx.shape[2], gx.shape[3]
        for ni in prange(n):
            for oi in range(o):
                for hi in range(ho):
                    hb = hi * sh - ph
                    for wi in range(wo):
                        wb = wi * sw - pw
                        g = gy[ni, oi, hi, wi]
                        for ci in range(c):
                            for khi in range(kh):
                                sr = hb + khi
                                if sr < 0 or sr >= h:
                                    continue
                                for kwi in range(kw):
                                    sc = wb + kwi
                                    if 0 <= sc < wd:
                                        gx[ni, ci, sr, sc] += g * w[oi, ci, khi, kwi]

    @njit(cache=True, parallel=True)
    def _conv2d_dw_nb(x, sh, sw, ph, pw, gy, gw, gb):
        n, o, ho, wo = gy.shape
        _, c, h, wd = x.shape
        kh, kw = gw.shape[2], gw.shape[3]
        for oi in prange(o):
            for ni in range(n):
                for hi in range(ho):
                    hb = hi * sh - ph
                    for wi in range(wo):
                        wb = wi * sw - pw
                        g = gy[ni, oi, hi, wi]
                        gb[oi] += g
                        for ci in range(c):
                            for khi in range(kh):
                                sr = hb + khi
                                if sr < 0 or sr >= h:
                                    continue
                                for kwi in range(kw):
                                    sc = wb + kwi
                                    if 0 <= sc < wd:
                                        gw[oi, ci, khi, kwi] += g * x[ni, ci, sr, sc]

    @njit(cache=True, parallel=True)
    def _conv1d_transpose_forward_nb(x, w, b, stride, y):
        n, c, l = x.shape
        _, o, k = w.shape
        lt = y.shape[2]
        for ni in prange(n):
            for oi in range(o):
                for li in range(lt):
                    y[ni, oi, li] = b[oi]
            for ci in range(c):
                for li in range(l):
                    v = x[ni, ci, li]
                    base = li * stride
                    for oi in range(o):
                        for ki in range(k):
                            y[ni, oi, base + ki] += v * w[ci, oi, ki]

    @njit(cache=True, parallel=True)
    def _conv1d_transpose_dx_nb(w, stride, gy, gx):
        n, c, l = gx.shape
        _, o, k = w.shape
        for ni in prange(n):
            for ci in range(c):
                for li in range(l):
                    base = li * stride
                    acc = 0.0
                    for oi in range(o):
                        for ki in range(k):
                            acc += gy[ni, oi, base + ki] * w[ci, oi, ki]
                    gx[ni, ci, li] = acc

    @njit(cache=True, parallel=True)
    def _conv1d_transpose_dw_nb(x, stride, gy, gw):
        n, c, l = x.shape
        _, o, k = gw.shape
        for ci in prange(c):
            for ni in range(n):
                for li in range(l):
                    v = x[ni, ci, li]
                    base = li * stride
                    for oi in range(o):
                        for ki in range(k):
                            gw[ci, oi, ki] += v * gy[ni, oi, base + ki]

    @njit(cache=True, parallel=True)
    def _scatter_render_nb(src, delays, gains, dirs, knot_hop, sample_rate, out):
        s_len = src.shape[0]
        n_paths, n_knots = delays.shape
        for n in prange(s_len):
            pos = n / knot_hop
            k = int(pos)
            if k > n_knots - 2:
                k = n_knots - 2
            a = pos - k
            if a > 1.0:
                a = 1.0
            acc_w = 0.0
            acc_x = 0.0
            acc_y = 0.0
            acc_z = 0.0
            for p in range(n_paths):
                d = (1.0 - a) * delays[p, k] + a * delays[p, k + 1]
                g = (1.0 - a) * gains[p, k] + a * gains[p, k + 1]
                sp = n - d * sample_rate
                si = int(math.floor(sp))
                if 0 <= si < s_len - 1:
                    frac = sp - si
                    sval = (1.0 - frac) * src[si] + frac * src[si + 1]
                else:
                    sval = 0.0
                gs = g * sval
                acc_w += gs * SQRT1_2
                acc_x += gs * ((1.0 - a) * dirs[p, k, 0] + a * dirs[p, k + 1, 0])
                acc_y += gs * ((1.0 - a) * dirs[p, k, 1] + a * dirs[p, k + 1, 1])
                acc_z += gs * ((1.0 - a) * dirs[p, k, 2] + a * dirs[p, k + 1, 2])
            out[n, 0] += acc_w
            out[n, 1] += acc_x
            out[n, 2] += acc_y
            out[n, 3] += acc_z


# ---------------------------------------------------------------------------
# dispatch layer
# ---------------------------------------------------------------------------

def _zero_bias(w, dtype):
    return np.zeros(w.shape[0], dtype=dtype)


def conv1d_forward(x, w, b, stride, pad):
    if accel.get_backend() == "numba":
        n, c, l = x.shape
        o, _, k = w.shape
        lo = (l + 2 * pad - k) // stride + 1
        y = np.empty((n, o, lo), dtype=x.dtype)
        bb = b if b is not None else _zero_bias(w, x.dtype)
        _conv1d_forward_nb(x, w, bb, stride, pad, y)
        return y
    return conv1d_forward_np(x, w, b, stride, pad)


def conv1d_backward(x, w, stride, pad, gy):
    if accel.get_backend() == "numba":
        gx = np.zeros_like(x)
        gw = np.zeros_like(w)
        gb = np.zeros(w.shape[0], dtype=w.dtype)
        _conv1d_dx_nb(w, stride, pad, gy, gx)
        _conv1d_dw_nb(x, stride, pad, gy, gw, gb)
        return gx, gw, gb
    return conv1d_backward_np(x, w, stride, pad, gy)


def conv2d_forward(x, w, b, stride, pad):
    if accel.get_backend() == "numba":
        n, c, h, wd = x.shape
        o, _, kh, kw = w.shape
        sh, sw = stride
        ph, pw = pad
        ho = (h + 2 * ph - kh) // sh + 1
        wo = (wd + 2 * pw - kw) // sw + 1
        y = np.empty((n, o, ho, wo), dtype=x.dtype)
        bb = b if b is not None else _zero_bias(w, x.dtype)
        _conv2d_forward_nb(x, w, bb, sh, sw, ph, pw, y)
        return y
    return conv2d_forward_np(x, w, b, stride, pad)


def conv2d_backward(x, w, stride, pad, gy):
    if accel.get_backend() == "numba":
        sh, sw = stride
        ph, pw = pad
        gx = np.zeros_like(x)
        gw = np.zeros_like(w)
        gb = np.zeros(w.shape[0], dtype=w.dtype)
        _conv2d_dx_nb(w, sh, sw, ph, pw, gy, gx)
        _conv2d_dw_nb(x, sh, sw, ph, pw, gy, gw, gb)
        return gx, gw, gb
    return conv2d_backward_np(x, w, stride, pad, gy)


def conv1d_transpose_forward(x, w, b, stride):
    if accel.get_backend() == "numba":
        n, c, l = x.shape
        _, o, k = w.shape
        lt = (l - 1) * stride + k
        y = np.empty((n, o, lt), dtype=x.dtype)
        bb = b if b is not None else np.zeros(o, dtype=x.dtype)
        _conv1d_transpose_forward_nb(x, w, bb, stride, y)
        return y
    return conv1d_transpose_forward_np(x, w, b, stride)


def conv1d_transpose_backward(x, w, stride, gy):
    if accel.get_backend() == "numba":
        gx = np.empty_like(x)
        gw = np.zeros_like(w)
        gb = gy.sum(axis=(0, 2))
        _conv1d_transpose_dx_nb(w, stride, gy, gx)
        _conv1d_transpose_dw_nb(x, stride, gy, gw)
        return gx, gw, gb
    return conv1d_transpose_backward_np(x, w, stride, gy)


def scatter_render(src, delays, gains, dirs, knot_hop, sample_rate, out):
    if accel.get_backend() == "numba":
        _scatter_render_nb(src, delays, gains, dirs, float(knot_hop), float(sample_rate), out)
    else:
        scatter_render_np(src, delays, gains, dirs, float(knot_hop), float(sample_rate), out)
    return out
