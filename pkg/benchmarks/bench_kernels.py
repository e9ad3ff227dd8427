"""Compare the compiled and numpy kernel lanes on selection-sized inputs.

Run:  python3 benchmarks/bench_kernels.py [M] [J] [K]
"""

from __future__ import annotations

import sys
import time

import numpy as np

from bayescat._kernels import numpy_impl

try:
    from bayescat._kernels import _cyk as cython_impl
except ImportError:
    cython_impl = None


def bench(impl, theta, loadings, intercepts, repeats=20):
    p = impl.predictive_matrix(theta, loadings, intercepts)
    p_hat = impl.probit_clamped(loadings @ theta.mean(axis=0) + intercepts)
    timings = {}
    for name, fn in (
        ("predictive_matrix", lambda: impl.predictive_matrix(theta, loadings, intercepts)),
        ("eap_kl_scores", lambda: impl.eap_kl_scores(p, p_hat)),
        ("max_pos_scores", lambda: impl.max_pos_scores(p)),
        ("mi_scores_weighted", lambda: impl.mi_scores_weighted(p)),
        ("mi_scores_pooled", lambda: impl.mi_scores_pooled(p)),
        ("max_var_scores", lambda: impl.max_var_scores(p)),
    ):
        fn()  # warm up
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        timings[name] = (time.perf_counter() - t0) / repeats
    return timings


def main():
    m = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    j = int(sys.argv[2]) if len(sys.argv) > 2 else 150
    k = int(sys.argv[3]) if len(sys.argv) > 3 else 5
    rng = np.random.default_rng(0)
    theta = rng.standard_normal((m, k))
    loadings = rng.uniform(0.3, 3.0, size=(j, k)) * (rng.random((j, k)) < 0.5)
    loadings[:, 0] = rng.uniform(0.3, 3.0, size=j)
    intercepts = rng.uniform(-1.5, 1.5, size=j)

    lanes = {"numpy": numpy_impl}
    if cython_impl is not None:
        lanes["cython"] = cython_impl

    results = {name: bench(impl, theta, loadings, intercepts)
               for name, impl in lanes.items()}
    ops = next(iter(results.values())).keys()
    print(f"M={m} J={j} K={k}  (mean seconds per call)")
    header = f"{'op':<22}" + "".join(f"{lane:>12}" for lane in results)
    if len(results) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for op in ops:
        row = f"{op:<22}" + "".join(f"{results[lane][op]:>12.6f}" for lane in results)
        if len(results) == 2:
            a, b = (results[lane][op] for lane in results)
            row += f"{a / b:>10.2f}x"
        print(row)


if __name__ == "__main__":
    main()
