#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Runs the convolution and bilinear-sampling kernels on the shapes that
dominate training, checks the two backends agree, and prints a table of
per-call times plus the speedup.  Usage:

    python benchmarks/bench_kernels.py [--min-time 0.1] [--dtype float32]
"""

import argparse
import time

import numpy as np

from tryon.kernels import _npcore

try:
    from tryon.kernels import _fastcore
except ImportError:
    _fastcore = None

# (cin, H, W, cout, k, stride, pad) drawn from the stage-1 extractors,
# the regression head, the UNet, and the feature pyramid
CONV_SHAPES = [
    (8, 64, 48, 16, 3, 2, 1),
    (16, 32, 24, 32, 3, 2, 1),
    (32, 16, 12, 64, 3, 2, 1),
    (64, 8, 6, 64, 3, 2, 1),
    (12, 4, 3, 32, 3, 2, 1),
    (12, 64, 48, 16, 3, 1, 1),
    (48, 32, 24, 16, 3, 1, 1),
    (96, 16, 12, 32, 3, 1, 1),
    (128, 8, 6, 64, 3, 1, 1),
    (3, 64, 48, 8, 3, 2, 1),
]

BILINEAR_SHAPES = [
    (3, 64, 48),
    (1, 64, 48),
    (3, 256, 192),
]


def _time(fn, min_time):
    fn()  # warm up
    t0 = time.perf_counter()
    calls = 0
    while time.perf_counter() - t0 < min_time:
        fn()
        calls += 1
    return (time.perf_counter() - t0) / calls


def bench_conv(mod, x, w, gy, stride, pad, min_time):
    fwd = _time(lambda: mod.conv2d_forward(x, w, stride, pad), min_time)
    bwd = _time(lambda: mod.conv2d_backward(x, w, gy, stride, pad), min_time)
    return fwd, bwd


def bench_bilinear(mod, img, grid, gout, min_time):
    fwd = _time(lambda: mod.bilinear_forward(img, grid), min_time)
    bwd = _time(lambda: mod.bilinear_backward(img, grid, gout), min_time)
    return fwd, bwd


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--min-time", type=float, default=0.1,
                        help="seconds of repetitions per measurement")
    parser.add_argument("--dtype", choices=["float32", "float64"],
                        default="float32")
    args = parser.parse_args()

    if _fastcore is None:
        print("compiled backend not built; showing numpy fallback only")
    dtype = np.dtype(args.dtype)
    rng = np.random.default_rng(0)
    header = "%-30s %12s %12s %9s" % ("kernel", "numpy", "compiled", "speedup")
    print(header)
    print("-" * len(header))

    totals = {"np": 0.0, "cy": 0.0}
    for cin, h, w, cout, k, stride, pad in CONV_SHAPES:
        x = rng.standard_normal((cin, h, w)).astype(dtype)
        wt = rng.standard_normal((cout, cin, k, k)).astype(dtype)
        ref = _npcore.conv2d_forward(x, wt, stride, pad)
        gy = np.ones_like(ref)
        np_f, np_b = bench_conv(_npcore, x, wt, gy, stride, pad, args.min_time)
        label = "conv %dx%dx%d->%d s%d" % (cin, h, w, cout, stride)
        if _fastcore is None:
            print("%-30s %9.3f ms" % (label, (np_f + np_b) * 1e3))
            continue
        got = _fastcore.conv2d_forward(x, wt, stride, pad)
        assert np.allclose(got, ref, rtol=1e-4, atol=1e-5), "backend mismatch"
        cy_f, cy_b = bench_conv(_fastcore, x, wt, gy, stride, pad, args.min_time)
        totals["np"] += np_f + np_b
        totals["cy"] += cy_f + cy_b
        print("%-30s %9.3f ms %9.3f ms %8.2fx"
              % (label, (np_f + np_b) * 1e3, (cy_f + cy_b) * 1e3,
                 (np_f + np_b) / (cy_f + cy_b)))

    for c, h, w in BILINEAR_SHAPES:
        img = rng.standard_normal((c, h, w)).astype(dtype)
        grid = rng.uniform(-0.95, 0.95, (h, w, 2)).astype(dtype)
        gout = np.ones((c, h, w), dtype=dtype)
        np_f, np_b = bench_bilinear(_npcore, img, grid, gout, args.min_time)
        label = "bilinear %dx%dx%d" % (c, h, w)
        if _fastcore is None:
            print("%-30s %9.3f ms" % (label, (np_f + np_b) * 1e3))
            continue
        ref = _npcore.bilinear_forward(img, grid)
        got = _fastcore.bilinear_forward(img, grid)
        assert np.allclose(got, ref, rtol=1e-4, atol=1e-5), "backend mismatch"
        cy_f, cy_b = bench_bilinear(_fastcore, img, grid, gout, args.min_time)
        totals["np"] += np_f + np_b
        totals["cy"] += cy_f + cy_b
        print("%-30s %9.3f ms %9.3f ms %8.2fx"
              % (label, (np_f + np_b) * 1e3, (cy_f + cy_b) * 1e3,
                 (np_f + np_b) / (cy_f + cy_b)))

    if _fastcore is not None and totals["cy"]:
        print("-" * len(header))
        print("%-30s %9.3f ms %9.3f ms %8.2fx"
              % ("total", totals["np"] * 1e3, totals["cy"] * 1e3,
                 totals["np"] / totals["cy"]))


if __name__ == "__main__":
    main()
