"""Compare the compiled and numpy conv1d kernels on patch-embedding shapes.

Usage: python benchmarks/bench_conv1d.py [--repeat 200]

The shapes cover the three places the kernel runs per forward pass: the
scalar projection (K=3, stride 1) and the two patch-merge stages
(K=stride=p). Both backends are timed on identical inputs; the compiled
extension must be built (pip install -e .) for the comparison to appear.
"""

import argparse
import time

import numpy as np

from mtsmae import kernels

CASES = [
    # (label, L, C_in, C_out, K, stride)
    ("scalar proj 784x7 -> 512", 786, 7, 512, 3, 1),
    ("patch stage 1 (p=2)", 784, 512, 512, 2, 2),
    ("patch stage 2 (p=2)", 392, 512, 512, 2, 2),
    ("desk scalar proj 48x3 -> 32", 50, 3, 32, 3, 1),
    ("desk patch stage (p=2)", 48, 32, 32, 2, 2),
]


def bench(fn, args, repeat):
    fn(*args)  # warmup
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def compiled_forward(x, w, stride):
    out = np.empty(((x.shape[0] - w.shape[0]) // stride + 1, w.shape[2]),
                   dtype=x.dtype)
    kernels._ext.conv1d_forward(x, w, stride, out)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = ap.parse_args()
    dtype = np.dtype(args.dtype)
    rng = np.random.default_rng(0)

    print(f"active backend: {kernels.BACKEND} (dtype {dtype.name}, "
          f"repeat {args.repeat})")
    header = f"{'case':<32} {'numpy':>12} {'compiled':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for label, L, c_in, c_out, K, stride in CASES:
        x = rng.normal(size=(L, c_in)).astype(dtype)
        w = rng.normal(size=(K, c_in, c_out)).astype(dtype)
        t_numpy = bench(kernels.conv1d_forward_numpy, (x, w, stride), args.repeat)
        if kernels.BACKEND == "compiled":
            t_comp = bench(compiled_forward, (x, w, stride), args.repeat)
            picked = "compiled" if kernels._use_compiled(w) else "numpy"
            print(f"{label:<32} {t_numpy * 1e6:>10.1f}us {t_comp * 1e6:>10.1f}us "
                  f"{t_numpy / t_comp:>8.2f}x  -> {picked}")
        else:
            print(f"{label:<32} {t_numpy * 1e6:>10.1f}us {'n/a':>12} {'n/a':>9}")


if __name__ == "__main__":
    main()
