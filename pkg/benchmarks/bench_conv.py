"""Benchmark the compiled convolution kernels against the numpy fallback.

Runs the three kernel entry points (forward, input gradient, weight
gradient) on encoder-shaped and coverage-shaped workloads and reports
per-call timings for both backends.

Usage: python3 benchmarks/bench_conv.py [--repeats N]
"""

import argparse
import time

import numpy as np

from treedec.numerics import kernels_py

try:
    from treedec.numerics import _convops
except ImportError:
    _convops = None


# (label, x shape, w shape, stride) covering the shapes the model uses
WORKLOADS = [
    ("encoder stage 1 (stride 2)", (1, 32, 128), (8, 1, 3, 3), 2),
    ("encoder stage 2 (stride 2)", (8, 16, 64), (16, 8, 3, 3), 2),
    ("coverage 11x11", (1, 8, 32), (4, 1, 11, 11), 1),
    ("wide input", (16, 8, 96), (32, 16, 3, 3), 1),
]


def bench(impl, x, w, stride, repeats):
    y = impl.conv2d_forward(x, w, stride)
    gout = np.ones_like(y)
    times = {}
    for name, fn in (
        ("forward", lambda: impl.conv2d_forward(x, w, stride)),
        ("grad_input", lambda: impl.conv2d_backward_input(gout, w, x.shape, stride)),
        ("grad_weight", lambda: impl.conv2d_backward_weight(gout, x, w.shape, stride)),
    ):
        fn()  # warm up
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        times[name] = (time.perf_counter() - t0) / repeats
    return times


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()

    backends = [("numpy", kernels_py)]
    if _convops is not None:
        backends.append(("cython", _convops))
    else:
        print("compiled backend not built; benchmarking numpy fallback only")

    rng = np.random.default_rng(0)
    header = f"{'workload':<28} {'kernel':<12}" + "".join(
        f"{name:>12}" for name, _ in backends
    )
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for label, xs, ws, stride in WORKLOADS:
        x = rng.standard_normal(xs)
        w = rng.standard_normal(ws)
        results = [bench(impl, x, w, stride, args.repeats) for _, impl in backends]
        for kernel in ("forward", "grad_input", "grad_weight"):
            row = f"{label:<28} {kernel:<12}"
            for r in results:
                row += f"{r[kernel] * 1e6:>10.1f}us"
            if len(results) == 2:
                row += f"{results[0][kernel] / results[1][kernel]:>9.2f}x"
            print(row)
            label = ""


if __name__ == "__main__":
    main()
