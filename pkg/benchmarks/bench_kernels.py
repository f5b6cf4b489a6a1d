"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from fusiontrack import kernels
from fusiontrack._kernels_py import footprint


def _boxes(rng, n):
    out = np.empty((n, 7))
    out[:, [0, 2]] = rng.uniform(-1, 1, (n, 2))
    out[:, 1] = rng.uniform(-0.2, 0.2, n)
    out[:, 3:6] = rng.uniform(0.4, 2.0, (n, 3))
    out[:, 6] = rng.uniform(-np.pi, np.pi, n)
    return out


def _cluster(rng, k, n):
    log_r = rng.normal(0.0, 1.0, (k, n))
    gate = rng.random((k, n)) < 0.8
    return log_r, gate


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    py = kernels.python_impl
    cy = kernels.compiled_impl()
    if cy is None:
        print("compiled kernels not built; only the Python fallback is available")
        return

    a, b = _boxes(rng, 5000), _boxes(rng, 5000)
    polys = [(footprint(*r[[0, 2, 3, 4, 6]]), footprint(*s[[0, 2, 3, 4, 6]])) for r, s in zip(a[:2000], b[:2000])]
    clusters = [_cluster(rng, 4, 5) for _ in range(200)]
    big = [_cluster(rng, 5, 6) for _ in range(20)]

    cases = [
        ("iou3d_batch 5000 pairs", lambda m: m.iou3d_batch(a, b)),
        ("iou3d_aligned_matrix 300x300", lambda m: m.iou3d_aligned_matrix(a[:300], b[:300])),
        ("clip 2000 footprints", lambda m: [m.clip(p, q) for p, q in polys]),
        ("jpda 200 clusters 4x5", lambda m: [m.jpda_marginals(l, g, 100_000) for l, g in clusters]),
        ("jpda 20 clusters 5x6", lambda m: [m.jpda_marginals(l, g, 1_000_000) for l, g in big]),
    ]
    print(f"{'kernel':32s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speed-up':>9s}")
    for name, fn in cases:
        tp = _time(lambda: fn(py), args.repeat)
        tc = _time(lambda: fn(cy), args.repeat)
        print(f"{name:32s} {tp * 1e3:12.2f} {tc * 1e3:12.2f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
