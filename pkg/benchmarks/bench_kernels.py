"""Time the compiled and numpy scoring kernels on PPME-sized candidate sets.

    python3 benchmarks/bench_kernels.py [--ks 140,400,1000] [--dims 3,8] [--repeat 3]
"""

import argparse
import time

import numpy as np

from dpgauss import kernels
from dpgauss.semimetrics import _spectral_inputs


def candidates(k, d, rng):
    A = rng.standard_normal((k, d, 2 * d))
    return list(A @ A.transpose(0, 2, 1) / (2 * d))


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - start)
    return min(times), result


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ks", default="140,400,1000")
    p.add_argument("--dims", default="3,8")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<10}{'k':>6}{'d':>4}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for k in map(int, args.ks.split(",")):
        for d in map(int, args.dims.split(",")):
            mats, linv, _ = _spectral_inputs(candidates(k, d, rng))
            pts = rng.standard_normal((k, d))
            for name, fn in (("spectral", lambda: kernels.spectral_within_counts(mats, linv, 2 / 3)),
                             ("euclid", lambda: kernels.euclid_within_counts(pts, 1.0))):
                timings, results = {}, []
                for b in backends:
                    with kernels.use_backend(b):
                        timings[b], out = best_of(fn, args.repeat)
                    results.append(out)
                # both backends must count the same balls
                assert all(np.array_equal(results[0], r) for r in results[1:])
                speed = (f"{timings['python'] / timings['compiled']:>9.1f}x"
                         if len(timings) == 2 else f"{'-':>10}")
                print(f"{name:<10}{k:>6}{d:>4}" + "".join(f"{timings[b]:>11.4f}s" for b in backends)
                      + speed)


if __name__ == "__main__":
    main()
