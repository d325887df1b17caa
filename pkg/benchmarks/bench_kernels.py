"""Compare the compiled Jacobi kernel with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Cases cover the shapes the package actually produces: one wide embedding
matrix per training step (``svd``), and large stacks of small matrices in
the theorem harness (``singular_values_batch``).
"""

import argparse
import time

import numpy as np

from goalgeom import _kernels
from goalgeom.matrixcore import _max_sweeps, _tol

try:
    from goalgeom._jacobi import jacobi_orthogonalize as compiled
except ImportError:
    compiled = None

CASES = [
    # (label, batch, rows, cols, accumulate)
    ("embedding 6x600, with vectors", 1, 6, 600, True),
    ("embedding 6x4000, with vectors", 1, 6, 4000, True),
    ("wide 32x2000, values only", 1, 32, 2000, False),
    ("stack 4096 x (4x9), values only", 4096, 4, 9, False),
    ("stack 256 x (6x14), values only", 256, 6, 14, False),
]


def time_kernel(fn, stack, accumulate, repeats):
    p, n = stack.shape[1:]
    best = float("inf")
    for _ in range(repeats):
        w = np.array(stack, order="C")
        q = np.tile(np.eye(p), (w.shape[0], 1, 1)) if accumulate else np.empty((w.shape[0], 0, 0))
        t = time.perf_counter()
        fn(w, q, accumulate, _tol(n), _max_sweeps(p))
        best = min(best, time.perf_counter() - t)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if compiled is None:
        print("compiled extension not built; run `python setup.py build_ext --inplace` first")
    rng = np.random.default_rng(0)
    print(f"{'case':<34} {'cython ms':>10} {'python ms':>10} {'speedup':>8}")
    for label, b, p, n, acc in CASES:
        stack = rng.standard_normal((b, p, n))
        py = time_kernel(_kernels.jacobi_orthogonalize_py, stack, acc, args.repeats)
        if compiled is None:
            print(f"{label:<34} {'-':>10} {py * 1e3:>10.2f} {'-':>8}")
            continue
        cy = time_kernel(compiled, stack, acc, args.repeats)
        print(f"{label:<34} {cy * 1e3:>10.2f} {py * 1e3:>10.2f} {py / cy:>7.1f}x")


if __name__ == "__main__":
    main()
