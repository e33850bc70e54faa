"""Time the numba kernels against the numpy reference path.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is warmed up
once (so numba compilation is excluded), then timed as the best of several
repeats. The maximum absolute difference between backends is printed next
to the timings.
"""

import argparse
import time

import numpy as np

from thinice.kernels import _numba, _numpy


def best_of(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(g):
    a, b = g.normal(size=(256, 64)).astype(np.float32), g.normal(size=(64, 64)).astype(np.float32)
    x = g.uniform(size=(64, 8, 16, 16)).astype(np.float32)
    k = g.normal(size=(16, 8, 3, 3)).astype(np.float32)
    out = _numpy.conv2d_forward(x, k, 2, 1)
    gout = g.normal(size=out.shape).astype(np.float32)
    v = np.round(g.normal(size=4000), 1)
    return {
        "matmul 256x64x64": lambda m: m.matmul(a, b),
        "conv2d forward": lambda m: m.conv2d_forward(x, k, 2, 1),
        "conv2d grad weight": lambda m: m.conv2d_backward_weight(gout, x, k.shape, 2, 1),
        "conv2d grad input": lambda m: m.conv2d_backward_input(gout, k, x.shape, 2, 1),
        "midranks n=4000": lambda m: m.midranks(v),
        "q-binomial 8x400": lambda m: m.gaussian_binomial(8, 400),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'max |diff|':>12}")
    for name, fn in cases(np.random.default_rng(args.seed)).items():
        t_np = best_of(lambda: fn(_numpy), args.repeats)
        t_nb = best_of(lambda: fn(_numba), args.repeats)
        diff = float(np.max(np.abs(np.asarray(fn(_numpy), dtype=np.float64) - fn(_numba))))
        print(f"{name:<22}{1e3 * t_np:>10.3f}{1e3 * t_nb:>10.3f}{t_np / t_nb:>8.2f}x{diff:>12.2e}")


if __name__ == "__main__":
    main()
