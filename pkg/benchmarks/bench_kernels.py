"""Time the im2col/col2im and max-pool kernels on every available backend.

    python3 benchmarks/bench_kernels.py [--reps 20]

Prints the best-of-reps time per kernel and backend and the speedup relative
to the numpy fallback. Outputs of the backends are compared before timing.
"""
import argparse
import timeit

import numpy as np

from wafernet.tensor import kernels

# (name, input shape, kernel, stride): shapes that show up in the model zoo
CASES = [
    ("conv5 8ch 256px", (1, 8, 260, 260), 5, 1),
    ("conv3 64ch 32px", (8, 64, 34, 34), 3, 1),
    ("conv3 256ch 8px", (16, 256, 10, 10), 3, 1),
]
POOLS = [
    ("pool2 8ch 256px", (1, 8, 256, 256), 2, 2),
    ("pool2 64ch 64px", (16, 64, 64, 64), 2, 2),
    ("pool3 32ch 33px", (8, 32, 33, 33), 3, 3),
]


def _best(fn, reps):
    return min(timeit.repeat(fn, number=1, repeat=reps)) * 1e3


def bench_conv(shape, k, stride, reps):
    rng = np.random.default_rng(0)
    xp = rng.standard_normal(shape, dtype=np.float32)
    n, c, h, w = shape
    out = {}
    ref = None
    for name in kernels.available():
        kernels.use(name)
        cols = kernels.im2col(xp, k, k, stride)
        back = kernels.col2im(cols, shape, k, k, stride)
        if ref is None:
            ref = (cols, back)
        else:
            np.testing.assert_allclose(cols, ref[0])
            np.testing.assert_allclose(back, ref[1], rtol=1e-5, atol=1e-4)
        out[name] = (_best(lambda: kernels.im2col(xp, k, k, stride), reps),
                     _best(lambda: kernels.col2im(cols, shape, k, k, stride), reps))
    return out


def bench_pool(shape, k, stride, reps):
    x = np.random.default_rng(1).standard_normal(shape, dtype=np.float32)
    out = {}
    ref = None
    for name in kernels.available():
        kernels.use(name)
        y, idx = kernels.maxpool_forward(x, k, stride)
        dx = kernels.maxpool_backward(np.ones_like(y), idx, x.shape)
        if ref is None:
            ref = (y, idx, dx)
        else:
            np.testing.assert_array_equal(y, ref[0])
            np.testing.assert_array_equal(idx, ref[1])
            np.testing.assert_array_equal(dx, ref[2])
        out[name] = (_best(lambda: kernels.maxpool_forward(x, k, stride), reps),
                     _best(lambda: kernels.maxpool_backward(np.ones_like(y), idx, x.shape), reps))
    return out


def _print(title, labels, results):
    print(f"\n{title}")
    print(f"{'case':<18}{'backend':<9}{labels[0]:>12}{labels[1]:>12}{'speedup':>10}")
    for case, per in results:
        base = per.get("python")
        for name, (a, b) in per.items():
            ratio = (base[0] + base[1]) / (a + b) if base else float("nan")
            print(f"{case:<18}{name:<9}{a:>10.3f}ms{b:>10.3f}ms{ratio:>9.2f}x")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args(argv)
    start = kernels.active().NAME
    print("backends:", ", ".join(kernels.available()), f"(default {start})")
    try:
        conv = [(name, bench_conv(s, k, st, args.reps)) for name, s, k, st in CASES]
        pool = [(name, bench_pool(s, k, st, args.reps)) for name, s, k, st in POOLS]
    finally:
        kernels.use(start)
    _print("im2col / col2im", ("im2col", "col2im"), conv)
    _print("maxpool", ("forward", "backward"), pool)


if __name__ == "__main__":
    main()
