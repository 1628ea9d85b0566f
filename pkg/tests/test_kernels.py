"""The two kernel backends must be interchangeable: same shapes, same numbers."""

import math

import numpy as np
import pytest

from acousticpose import accel, kernels

pytestmark = pytest.mark.skipif(
    not accel.NUMBA_AVAILABLE, reason="numba not importable"
)


def _run_both(fn, *args):
    old = accel.get_backend()
    try:
        accel.set_backend("numpy")
        a = fn(*args)
        accel.set_backend("numba")
        b = fn(*args)
    finally:
        accel.set_backend(old)
    return a, b


def _assert_close(a, b, tol=1e-12):
    if isinstance(a, tuple):
        assert len(a) == len(b)
        for ai, bi in zip(a, b):
            _assert_close(ai, bi, tol)
        return
    np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (3, 2)])
def test_conv1d_backends_agree(rng, stride, pad):
    x = rng.normal(size=(3, 5, 17))
    w = rng.normal(size=(7, 5, 4))
    b = rng.normal(size=7)
    ya, yb = _run_both(kernels.conv1d_forward, x, w, b, stride, pad)
    _assert_close(ya, yb)
    gy = rng.normal(size=ya.shape)
    ga, gb_ = _run_both(kernels.conv1d_backward, x, w, stride, pad, gy)
    _assert_close(ga, gb_)


@pytest.mark.parametrize("stride,pad", [((1, 1), (0, 0)), ((2, 1), (1, 0)), ((4, 2), (0, 1))])
def test_conv2d_backends_agree(rng, stride, pad):
    x = rng.normal(size=(2, 3, 16, 9))
    w = rng.normal(size=(5, 3, 4, 3))
    b = rng.normal(size=5)
    ya, yb = _run_both(kernels.conv2d_forward, x, w, b, stride, pad)
    _assert_close(ya, yb)
    gy = rng.normal(size=ya.shape)
    ga, gb_ = _run_both(kernels.conv2d_backward, x, w, stride, pad, gy)
    _assert_close(ga, gb_)


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv1d_transpose_backends_agree(rng, stride):
    x = rng.normal(size=(2, 4, 9))
    w = rng.normal(size=(4, 6, 3))
    b = rng.normal(size=6)
    ya, yb = _run_both(kernels.conv1d_transpose_forward, x, w, b, stride)
    _assert_close(ya, yb)
    gy = rng.normal(size=ya.shape)
    ga, gb_ = _run_both(kernels.conv1d_transpose_backward, x, w, stride, gy)
    _assert_close(ga, gb_)


def test_scatter_render_backends_agree(rng):
    s_len = 4000
    n_paths, n_knots = 5, 9
    src = rng.normal(size=s_len)
    delays = rng.uniform(0.001, 0.02, size=(n_paths, n_knots))
    gains = rng.uniform(0.1, 1.0, size=(n_paths, n_knots))
    dirs = rng.normal(size=(n_paths, n_knots, 3))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    out_a = np.zeros((s_len, 4))
    out_b = np.zeros((s_len, 4))
    old = accel.get_backend()
    try:
        accel.set_backend("numpy")
        kernels.scatter_render(src, delays, gains, dirs, 500, 48000, out_a)
        accel.set_backend("numba")
        kernels.scatter_render(src, delays, gains, dirs, 500, 48000, out_b)
    finally:
        accel.set_backend(old)
    _assert_close(out_a, out_b)


# --- correctness against slow reference math (backend-independent) ---------


def _conv1d_ref(x, w, b, stride, pad):
    n, c, l = x.shape
    o, _, k = w.shape
    lo = (l + 2 * pad - k) // stride + 1
    y = np.zeros((n, o, lo))
    for ni in range(n):
        for oi in range(o):
            for li in range(lo):
                acc = b[oi]
                for ci in range(c):
                    for ki in range(k):
                        src = li * stride - pad + ki
                        if 0 <= src < l:
                            acc += x[ni, ci, src] * w[oi, ci, ki]
                y[ni, oi, li] = acc
    return y


def test_conv1d_matches_reference(rng, numpy_backend):
    x = rng.normal(size=(2, 3, 11))
    w = rng.normal(size=(4, 3, 3))
    b = rng.normal(size=4)
    y = kernels.conv1d_forward(x, w, b, 2, 1)
    np.testing.assert_allclose(y, _conv1d_ref(x, w, b, 2, 1), atol=1e-12)


def test_conv1d_transpose_is_conv_adjoint(rng, numpy_backend):
    """<conv(x), y> == <x, conv_transpose(y)> when both share one weight."""
    x = rng.normal(size=(2, 3, 12))
    w = rng.normal(size=(5, 3, 4))  # conv weight [O, C, K]
    stride = 2
    y = kernels.conv1d_forward(x, w, np.zeros(5), stride, 0)
    g = rng.normal(size=y.shape)
    # transpose kernel stores weights as [C_in=O, C_out=C, K]
    xt = kernels.conv1d_transpose_forward(g, np.transpose(w, (0, 1, 2)), np.zeros(3), stride)
    # adjoint of stride-s valid conv pads the output to the input length
    xt = xt[:, :, : x.shape[2]]
    lhs = float(np.sum(y * g))
    rhs = float(np.sum(x * xt))
    assert math.isclose(lhs, rhs, rel_tol=1e-10)


def test_scatter_render_integer_delay(numpy_backend):
    """A single static path with an integer-sample delay is a pure shift."""
    sr = 1000
    src = np.zeros(64)
    src[10] = 1.0
    delay_samples = 7
    delays = np.full((1, 2), delay_samples / sr)
    gains = np.full((1, 2), 0.5)
    dirs = np.zeros((1, 2, 3))
    dirs[:, :, 0] = 1.0
    out = np.zeros((64, 4))
    kernels.scatter_render(src, delays, gains, dirs, 64, sr, out)
    expect_w = np.zeros(64)
    expect_w[10 + delay_samples] = 0.5 * math.sqrt(0.5)
    np.testing.assert_allclose(out[:, 0], expect_w, atol=1e-12)
    np.testing.assert_allclose(out[:, 1], np.sqrt(2.0) * out[:, 0], atol=1e-12)
    np.testing.assert_allclose(out[:, 2:], 0.0, atol=1e-12)


def test_scatter_render_fractional_delay_interpolates(numpy_backend):
    sr = 1000
    src = np.zeros(32)
    src[5] = 1.0
    delays = np.full((1, 2), 2.5 / sr)
    gains = np.ones((1, 2))
    dirs = np.zeros((1, 2, 3))
    dirs[:, :, 2] = 1.0
    out = np.zeros((32, 4))
    kernels.scatter_render(src, delays, gains, dirs, 32, sr, out)
    # the impulse lands half way between samples 7 and 8 on the z channel
    np.testing.assert_allclose(out[7, 3], 0.5, atol=1e-12)
    np.testing.assert_allclose(out[8, 3], 0.5, atol=1e-12)
    assert abs(out[6, 3]) < 1e-12 and abs(out[9, 3]) < 1e-12


def test_scatter_render_knot_interpolation(numpy_backend):
    """Gains defined at two knots interpolate linearly between them."""
    sr = 100
    s_len = 11
    src = np.ones(s_len)
    delays = np.zeros((1, 2))
    gains = np.array([[0.0, 1.0]])
    dirs = np.zeros((1, 2, 3))
    dirs[:, :, 1] = 1.0
    out = np.zeros((s_len, 4))
    kernels.scatter_render(src, delays, gains, dirs, 10, sr, out)
    np.testing.assert_allclose(out[:10, 2], np.arange(10) / 10.0, atol=1e-12)
