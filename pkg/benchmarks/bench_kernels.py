"""Timing comparison of the two kernel backends.

Runs each hot kernel on training-shaped inputs under the pure-numpy and the
compiled backend and prints a table of per-call times plus the speedup. The
first compiled call is excluded from timing (JIT warmup).

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from affground import backend, kernels


def _time(fn, repeats):
    fn()  # warmup (JIT compile on the numba path, cache touch on numpy)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng):
    h, w, d, dp = 16, 16, 32, 128
    x = rng.standard_normal((h, w, d))
    w1 = rng.standard_normal((3, 3, d, d))
    b1 = rng.standard_normal(d)
    dy = rng.standard_normal((h, w, d))
    points = rng.standard_normal((h * w, d))
    init = points[rng.choice(h * w, size=3, replace=False)].copy()
    z = rng.standard_normal((256, dp))
    zn = z / np.linalg.norm(z, axis=1, keepdims=True)
    m = rng.random((h, w))
    return [
        ("conv3x3_forward", lambda: kernels.conv3x3_forward(x, w1, b1)),
        ("conv3x3_backward", lambda: kernels.conv3x3_backward(x, w1, dy)),
        ("kmeans_lloyd", lambda: kernels.kmeans_lloyd(points, init, 100, 1e-6)),
        ("pairwise_contrast", lambda: kernels.pairwise_contrast(zn, 128, 2.0)),
        ("box_mean_valid", lambda: kernels.box_mean_valid(m, 3)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = _cases(rng)

    results = {}
    for name_backend in ("numpy", "numba"):
        try:
            backend.set_backend(name_backend)
        except Exception as exc:
            print(f"skipping backend {name_backend}: {exc}")
            continue
        for name, fn in cases:
            results[(name, name_backend)] = _time(fn, args.repeats)

    print(f"{'kernel':<20} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for name, _ in cases:
        t_np = results.get((name, "numpy"))
        t_nb = results.get((name, "numba"))
        row = f"{name:<20} {t_np * 1e6:>10.1f}us"
        if t_nb is not None:
            row += f" {t_nb * 1e6:>10.1f}us {t_np / t_nb:>8.2f}x"
        else:
            row += f" {'n/a':>12} {'':>9}"
        print(row)


if __name__ == "__main__":
    main()
