"""Timing comparison of the numba and numpy kernel backends.

Runs each hot kernel at a desk-scale shape and at the native model scale,
prints a table of per-call wall time. The first numba call per kernel pays
JIT compilation; a warmup call absorbs it so the table reports steady state.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from acousticpose import accel, kernels


def _time(fn, repeats):
    fn()  # warmup: JIT compile / cache fill
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng):
    """(name, builder) pairs; builder returns a zero-arg callable."""
    cases = []

    def conv1d(n, c, l, o, k):
        x = rng.standard_normal((n, c, l))
        w = rng.standard_normal((o, c, k))
        b = rng.standard_normal(o)
        gy = rng.standard_normal((n, o, (l + 2 - k) + 1))

        def fwd():
            kernels.conv1d_forward(x, w, b, 1, 1)

        def bwd():
            kernels.conv1d_backward(x, w, 1, 1, gy)

        return fwd, bwd

    def conv2d(n, c, h, wd, o, kh, kw):
        x = rng.standard_normal((n, c, h, wd))
        w = rng.standard_normal((o, c, kh, kw))
        b = rng.standard_normal(o)
        ho = h - kh + 1
        wo = wd - kw + 1
        gy = rng.standard_normal((n, o, ho, wo))

        def fwd():
            kernels.conv2d_forward(x, w, b, (1, 1), (0, 0))

        def bwd():
            kernels.conv2d_backward(x, w, (1, 1), (0, 0), gy)

        return fwd, bwd

    def scatter(n_paths, n_samples):
        src = rng.standard_normal(n_samples + 4096)
        n_knots = n_samples // 2400 + 2
        delays = rng.uniform(0.001, 0.02, (n_paths, n_knots))
        gains = rng.uniform(0.01, 0.2, (n_paths, n_knots))
        dirs = rng.standard_normal((n_paths, n_knots, 3))
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        out = np.zeros((n_samples, 4))

        def run():
            out[:] = 0.0
            kernels.scatter_render(src, delays, gains, dirs, 2400, 48000, out)

        return run

    f, b = conv1d(16, 16, 512, 32, 3)
    cases += [("conv1d fwd  16x16x512", f), ("conv1d bwd  16x16x512", b)]
    f, b = conv2d(16, 11, 32, 12, 32, 3, 1)
    cases += [("conv2d fwd  16x11x32x12", f), ("conv2d bwd  16x11x32x12", b)]
    f, b = conv2d(16, 32, 128, 12, 64, 3, 1)
    cases += [("conv2d fwd  16x32x128x12", f), ("conv2d bwd  16x32x128x12", b)]
    cases.append(("scatter 42 paths x 1 s", scatter(42, 48000)))
    cases.append(("scatter 42 paths x 6 s", scatter(42, 288000)))
    return cases


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cases = _cases(rng)
    backends = [b for b in ("numpy", "numba") if b in accel.available_backends()]
    results = {}
    for backend in backends:
        accel.set_backend(backend)
        for name, fn in cases:
            results[(name, backend)] = _time(fn, args.repeats)

    width = max(len(n) for n, _ in cases)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{b:>10}" for b in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, _ in cases:
        row = f"{name:<{width}}  "
        times = [results[(name, b)] for b in backends]
        row += "  ".join(f"{t * 1e3:8.2f}ms" for t in times)
        if len(times) == 2 and times[1] > 0:
            row += f"  {times[0] / times[1]:7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
