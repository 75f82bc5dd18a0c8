"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from pyrabow._native import _fallback

try:
    from pyrabow._native import _core
except ImportError:
    _core = None


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    mag = rng.random((256, 256))
    ori = rng.random((256, 256)) * 2 * np.pi
    grid = np.arange(8, 249, 8)
    xs, ys = [g.ravel() for g in np.meshgrid(grid, grid)]
    yield "sift 961 kp, 16px", lambda m: m.sift_descriptors(mag, ori, xs, ys, 16)

    X = rng.random((400, 512))
    yield "hist-intersection gram 400x400x512", lambda m: m.hist_intersection_gram(X, X)

    P = rng.normal(size=(600, 10))
    y = np.where(P[:, 0] * P[:, 1] > 0, 1.0, -1.0)
    K = np.exp(-0.1 * ((P[:, None] - P[None]) ** 2).sum(-1))
    yield "smo n=600 rbf", lambda m: m.smo_solve(K, y, 10.0, 1e-3, 6000)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<38}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for name, run in cases(rng):
        t_np = _best(lambda: run(_fallback), args.repeat)
        if _core is None:
            print(f"{name:<38}{t_np:>12.4f}{'n/a':>12}{'':>10}")
            continue
        t_cy = _best(lambda: run(_core), args.repeat)
        print(f"{name:<38}{t_np:>12.4f}{t_cy:>12.4f}{t_np / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
