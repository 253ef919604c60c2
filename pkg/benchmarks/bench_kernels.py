"""Benchmark the hot kernels on both backends: numba JIT vs pure numpy.

Runs each kernel on realistic shapes (embedding forward/backward aggregation,
forest traversal, CF scoring scans), reports per-call medians and the
speedup, and checks that both backends agree numerically.

Usage:
    python benchmarks/bench_kernels.py [--trials 200]
"""

import argparse
import time

import numpy as np

from biguide import kernels as K


def _median_call_us(fn, args, trials):
    fn(*args)  # warm up (triggers JIT compilation on the numba path)
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn(*args)
        samples.append((time.perf_counter() - t0) * 1e6)
    return float(np.median(samples))


def build_cases(rng):
    # Graph aggregation: a 40-node state graph with 64-dim hidden state.
    n, d = 40, 64
    a = np.triu(rng.random((n, n)) < 0.15, 1)
    a = a | a.T
    indptr = np.zeros(n + 1, dtype=np.int64)
    indices = []
    for i in range(n):
        row = np.flatnonzero(a[i])
        indices.extend(row)
        indptr[i + 1] = len(indices)
    indices = np.asarray(indices, dtype=np.int64)
    h = rng.standard_normal((n, d))

    # CF scoring: 600 transitions / 1000 session summaries at 64 dims.
    src = rng.standard_normal((600, d))
    src /= np.linalg.norm(src, axis=1, keepdims=True)
    ops = rng.integers(0, 7, size=600)
    q = rng.standard_normal(d)
    q /= np.linalg.norm(q)
    summaries = rng.standard_normal((1000, d))

    # Forest traversal: 20 stacked depth-10 trees (structure only).
    n_nodes, n_trees = 0, 20
    feature, threshold, left, right, roots = [], [], [], [], []
    for _ in range(n_trees):
        roots.append(n_nodes)
        depth_nodes = 2 ** 7 - 1
        for i in range(depth_nodes):
            child = n_nodes + 2 * i + 1
            if child + 1 < n_nodes + depth_nodes:
                feature.append(int(rng.integers(0, d)))
                threshold.append(float(rng.standard_normal()))
                left.append(child)
                right.append(child + 1)
            else:
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
        n_nodes += depth_nodes
    forest = (np.asarray(feature, dtype=np.int64), np.asarray(threshold),
              np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
              np.asarray(roots, dtype=np.int64))

    # Split search: 500 samples x 8 candidate features, 12 classes.
    X = rng.standard_normal((500, 8))
    y = rng.integers(0, 12, size=500).astype(np.int64)

    return {
        "neighbor_mean": (h, indptr, indices),
        "neighbor_mean_grad": (h, indptr, indices),
        "transition_scores": (src, ops, q, 3, 0.5),
        "summary_scores": (summaries, q),
        "forest_apply": (*forest, q),
        "best_split": (X, y, 12, 1),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=200)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = build_cases(rng)
    backends = K.available_backends()

    print(f"{'kernel':<22}" + "".join(f"{b + ' (us)':>14}" for b in backends)
          + f"{'speedup':>10}   agree")
    for name, call_args in cases.items():
        times = {}
        outs = {}
        for backend in backends:
            fn = K.impls(backend)[name]
            times[backend] = _median_call_us(fn, call_args, args.trials)
            outs[backend] = fn(*call_args)
        if len(backends) == 2:
            a, b = outs["numpy"], outs["numba"]
            if isinstance(a, tuple):
                agree = all(np.allclose(x, y, atol=1e-9, equal_nan=True)
                            for x, y in zip(a, b))
            else:
                agree = np.allclose(a, b, atol=1e-9)
            speedup = times["numpy"] / times["numba"]
            print(f"{name:<22}" + "".join(f"{times[b]:>14.2f}" for b in backends)
                  + f"{speedup:>9.1f}x   {'yes' if agree else 'NO'}")
        else:
            print(f"{name:<22}{times[backends[0]]:>14.2f}")

    print(f"\nactive backend by default: {K.default_backend()} "
          f"(set {K.ENV_FLAG}=1 to force numpy)")


if __name__ == "__main__":
    main()
