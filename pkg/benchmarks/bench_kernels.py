"""Benchmark the compiled kernel core against the numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--scale SCALE] [--repeat N]

Each kernel runs on a workload shaped like the pipeline's real inputs
(surface-shell clouds at centimeter density). Results are checked for
equality between backends before timing is reported.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from pipegraph._kernels import _kernels_py  # noqa: E402

try:
    from pipegraph._kernels import _core
except ImportError:
    _core = None


def cylinder_shell(rng, n, length=1.0, radius=0.035):
    t = rng.uniform(0, length, n)
    angle = rng.uniform(0, 2 * np.pi, n)
    return np.stack([t, radius * np.cos(angle), radius * np.sin(angle)], axis=1)


def time_call(fn, repeat):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def equal(a, b):
    if isinstance(a, tuple):
        return all(equal(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scale", type=float, default=1.0,
                        help="workload size multiplier (default 1.0)")
    parser.add_argument("--repeat", type=int, default=3,
                        help="repetitions per measurement; best time wins")
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    s = args.scale
    cloud = np.concatenate(
        [cylinder_shell(rng, int(6000 * s)) + off
         for off in ((0, 0, 0), (0, 0.3, 0), (0, 0, 0.3))]
    )
    small_a = cylinder_shell(rng, int(1500 * s))
    small_b = cylinder_shell(rng, int(1500 * s)) + 0.05

    workloads = [
        ("radius_neighbors (eps=0.05)",
         lambda impl: impl.radius_neighbors(cloud, 0.05)),
        ("radius_neighbors (eps=0.10)",
         lambda impl: impl.radius_neighbors(cloud, 0.10)),
        ("knn_mean_dists (k=16)",
         lambda impl: impl.knn_mean_dists(small_a, 16)),
        ("pairwise_count_within",
         lambda impl: impl.pairwise_count_within(small_a, small_b, 0.02)),
        ("nearest_neighbor",
         lambda impl: impl.nearest_neighbor(small_a, small_b)),
    ]

    print(f"cloud: {cloud.shape[0]} pts, pair inputs: {small_a.shape[0]} pts, "
          f"repeat={args.repeat}")
    header = f"{'kernel':32s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for name, call in workloads:
        t_py, r_py = time_call(lambda: call(_kernels_py), args.repeat)
        if _core is None:
            print(f"{name:32s} {t_py * 1e3:9.1f}ms {'n/a':>10s} {'-':>8s}")
            continue
        t_c, r_c = time_call(lambda: call(_core), args.repeat)
        match = "" if equal(r_py, r_c) else "  RESULTS DIFFER!"
        print(f"{name:32s} {t_py * 1e3:9.1f}ms {t_c * 1e3:9.1f}ms "
              f"{t_py / t_c:7.1f}x{match}")
    if _core is None:
        print("\ncompiled core not built; run: python setup.py build_ext --inplace")


if __name__ == "__main__":
    main()
