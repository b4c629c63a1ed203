"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The numba timings exclude compilation (one warm-up call per kernel).
"""

import argparse
import time

import numpy as np

from roughreg.kernels import KERNELS


def inputs(n, rng):
    t = np.linspace(0.0, 1.0, n)
    x = np.cumsum(rng.standard_normal((n, 2)) * np.sqrt(1.0 / n), axis=0)
    area = rng.standard_normal((n, n, 2, 2))
    return {
        "pvar_dp": (x, 2.5),
        "pair_ratio_max": (x, t, 0.4, 0.0, 0.0, 0),
        "chen_defect_max": (x, x, area),
    }


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--sizes", default="65,129,257")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'n':>6}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>9}  agree")
    for n in (int(s) for s in args.sizes.split(",")):
        for name, call_args in inputs(n, rng).items():
            jit, ref = KERNELS[name]
            jit(*call_args)
            tj, a = best_of(jit, call_args, args.repeat)
            tn, b = best_of(ref, call_args, args.repeat)
            agree = np.allclose(a, b, rtol=1e-10, atol=1e-12)
            print(f"{name:<18}{n:>6}{tj:>12.2e}{tn:>12.2e}{tn / tj:>9.1f}  {agree}")


if __name__ == "__main__":
    main()
